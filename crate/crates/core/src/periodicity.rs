//! Cyclic-class detection on the support graph of surviving transitions.

use std::collections::VecDeque;

use crate::chain::{AbsorbedKernel, CyclicStructure};
use crate::error::{Error, Result};

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn adjacency(kernel: &AbsorbedKernel) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = kernel.len();
    let m = kernel.matrix();
    let mut forward = vec![Vec::new(); n];
    let mut backward = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] > 0.0 {
                forward[i].push(j);
                backward[j].push(i);
            }
        }
    }
    (forward, backward)
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

/// Finds the period and the cyclic classes of an irreducible absorbed chain.
///
/// Edges are the strictly positive entries of the kernel. Breadth-first
/// levels from the lexicographically smallest label give the period as the
/// gcd of `level(u) + 1 - level(v)` over all edges; classes are levels mod
/// the period, so the smallest label always lands in `A_0`.
pub fn detect_cyclic_structure(kernel: &AbsorbedKernel) -> Result<CyclicStructure> {
    let n = kernel.len();
    if n == 0 {
        return Err(Error::EmptyStateSpace);
    }
    let (forward, backward) = adjacency(kernel);
    if forward.iter().all(Vec::is_empty) {
        return Err(Error::NoSurvivingTransition);
    }
    let labels = kernel.states();
    let root = (0..n).min_by(|&a, &b| labels[a].cmp(&labels[b])).unwrap();

    let level = bfs_levels(&forward, root);
    let reverse = bfs_levels(&backward, root);
    if let Some(x) = (0..n).find(|&x| level[x].is_none() || reverse[x].is_none()) {
        return Err(Error::NotStronglyConnected {
            root: labels[root].clone(),
            unreachable: labels[x].clone(),
        });
    }
    let level: Vec<usize> = level.into_iter().map(Option::unwrap).collect();

    let mut period = 0;
    for (u, targets) in forward.iter().enumerate() {
        for &v in targets {
            period = gcd(period, (level[u] + 1).abs_diff(level[v]));
        }
    }
    // Strong connectivity guarantees a cycle, hence a nonzero gcd.
    debug_assert!(period > 0);
    CyclicStructure::new(period, level.iter().map(|l| l % period).collect())
}

/// Largest surviving mass that a state sends outside the class following its own.
///
/// Zero means the partition satisfies the cyclic condition exactly.
pub fn verify_partition(kernel: &AbsorbedKernel, cyclic: &CyclicStructure) -> f64 {
    let t = cyclic.period();
    let m = kernel.matrix();
    let mut worst: f64 = 0.0;
    for x in 0..kernel.len() {
        let target = (cyclic.class_of(x) + 1) % t;
        let misplaced: f64 = (0..kernel.len())
            .filter(|&y| cyclic.class_of(y) != target)
            .map(|y| m[(x, y)])
            .sum();
        worst = worst.max(misplaced);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn pure_cycle_has_period_three() {
        let c = detect_cyclic_structure(&instances::pure_cycle(3)).unwrap();
        assert_eq!(c.period(), 3);
        assert_eq!(c.classes(), &[0, 1, 2]);
    }

    #[test]
    fn two_cycle_is_bipartite() {
        let c = detect_cyclic_structure(&instances::two_cycle(0.8, 0.5)).unwrap();
        assert_eq!(c.period(), 2);
        assert_eq!(c.classes(), &[0, 1]);
    }

    #[test]
    fn self_loop_makes_chain_aperiodic() {
        let c = detect_cyclic_structure(&instances::lazy_pair(0.3)).unwrap();
        assert_eq!(c.period(), 1);
        assert_eq!(c.classes(), &[0, 0]);
    }

    #[test]
    fn anchor_is_smallest_label() {
        let k = AbsorbedKernel::new(
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
            vec!["z", "b", "m"],
        )
        .unwrap();
        let c = detect_cyclic_structure(&k).unwrap();
        assert_eq!(c.class_of(1), 0);
        assert_eq!(c.class_of(2), 1);
        assert_eq!(c.class_of(0), 2);
    }

    #[test]
    fn rejects_reducible_and_dead_chains() {
        let k = AbsorbedKernel::new(vec![vec![0.5, 0.5], vec![0.0, 0.9]], vec!["a", "b"]).unwrap();
        assert!(matches!(detect_cyclic_structure(&k), Err(Error::NotStronglyConnected { .. })));
        let dead = AbsorbedKernel::new(vec![vec![0.0]], vec!["a"]).unwrap();
        assert_eq!(detect_cyclic_structure(&dead), Err(Error::NoSurvivingTransition));
    }

    #[test]
    fn partition_residuals() {
        let k = instances::two_cycle(0.8, 0.5);
        let good = CyclicStructure::new(2, vec![0, 1]).unwrap();
        assert_eq!(verify_partition(&k, &good), 0.0);
        // For t = 2 swapping the classes is only a relabeling.
        let swapped = CyclicStructure::new(2, vec![1, 0]).unwrap();
        assert_eq!(verify_partition(&k, &swapped), 0.0);
        assert_eq!(verify_partition(&k, &CyclicStructure::trivial(2)), 0.0);

        let k3 = AbsorbedKernel::new(
            vec![vec![0.0, 0.8, 0.0], vec![0.0, 0.0, 0.5], vec![0.9, 0.0, 0.0]],
            vec!["s0", "s1", "s2"],
        )
        .unwrap();
        let misordered = CyclicStructure::new(3, vec![0, 2, 1]).unwrap();
        assert!((verify_partition(&k3, &misordered) - 0.9).abs() < 1e-15);
    }
}
