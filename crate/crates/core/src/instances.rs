//! Canonical chains and a seeded generator of random block-cyclic chains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{AbsorbedKernel, StateFunction};
use crate::linalg::Matrix;

/// `a -> b` with probability `p`, `b -> a` with probability `q`.
pub fn two_cycle(p: f64, q: f64) -> AbsorbedKernel {
    AbsorbedKernel::new(vec![vec![0.0, p], vec![q, 0.0]], vec!["a", "b"]).expect("valid two-cycle")
}

/// Deterministic cycle `s0 -> s1 -> ... -> s0` with no absorption.
pub fn pure_cycle(n: usize) -> AbsorbedKernel {
    let m = Matrix::from_fn(n, n, |i, j| if j == (i + 1) % n { 1.0 } else { 0.0 });
    let labels = (0..n).map(|i| format!("s{i}")).collect();
    AbsorbedKernel::from_matrix(m, labels).expect("valid cycle")
}

/// Two states with a self-loop of probability `self_loop` on `a`; aperiodic.
pub fn lazy_pair(self_loop: f64) -> AbsorbedKernel {
    let rest = (1.0 - self_loop) * 0.8;
    AbsorbedKernel::new(vec![vec![self_loop, rest], vec![0.5, 0.0]], vec!["a", "b"])
        .expect("valid lazy pair")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomChainSpec {
    pub n_states: usize,
    pub period: usize,
    /// Range of per-row survival probabilities.
    pub survival: (f64, f64),
    /// Probability that a non-spine class-to-class edge is present.
    pub density: f64,
}

/// A random chain whose surviving mass moves cyclically through `period`
/// contiguous blocks of states.
///
/// The first state of each class is a spine: it feeds every state of the
/// next class and receives from every state of the previous one. That makes
/// the support strongly connected with period exactly `period`. State `x00`
/// is always in class 0.
pub fn random_block_cyclic<R: Rng>(rng: &mut R, spec: &RandomChainSpec) -> AbsorbedKernel {
    let n = spec.n_states;
    let t = spec.period;
    assert!(t >= 1 && n >= t, "need at least one state per class");
    let mut sizes = vec![1usize; t];
    for _ in t..n {
        sizes[rng.random_range(0..t)] += 1;
    }
    let mut starts = Vec::with_capacity(t);
    let mut acc = 0;
    for &s in &sizes {
        starts.push(acc);
        acc += s;
    }
    let class_of: Vec<usize> = (0..t).flat_map(|c| std::iter::repeat_n(c, sizes[c])).collect();

    let mut m = Matrix::zeros(n, n);
    for x in 0..n {
        let c = class_of[x];
        let next = (c + 1) % t;
        let spine_row = x == starts[c];
        let mut total = 0.0;
        for y in starts[next]..starts[next] + sizes[next] {
            let forced = spine_row || y == starts[next];
            if forced || rng.random::<f64>() < spec.density {
                let w = rng.random_range(0.05..1.0);
                m[(x, y)] = w;
                total += w;
            }
        }
        let (lo, hi) = spec.survival;
        let survive = if hi > lo { rng.random_range(lo..hi) } else { lo };
        for y in 0..n {
            m[(x, y)] *= survive / total;
        }
    }
    let width = if n > 100 { 3 } else { 2 };
    let labels = (0..n).map(|i| format!("x{i:0width$}")).collect();
    AbsorbedKernel::from_matrix(m, labels).expect("generator produces valid kernels")
}

/// [`random_block_cyclic`] driven by a ChaCha8 stream seeded with `seed`.
pub fn seeded_block_cyclic(seed: u64, spec: &RandomChainSpec) -> AbsorbedKernel {
    random_block_cyclic(&mut ChaCha8Rng::seed_from_u64(seed), spec)
}

/// The randomized suite used by the acceptance tests: `count` chains with
/// at most `max_states` states and periods in `1..=6`.
pub fn random_suite(seed: u64, count: usize, max_states: usize) -> Vec<AbsorbedKernel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let period = rng.random_range(1..=6);
            let n_states = rng.random_range(period.max(2)..=max_states);
            let spec = RandomChainSpec {
                n_states,
                period,
                survival: (0.5, 1.0),
                density: rng.random_range(0.2..0.9),
            };
            random_block_cyclic(&mut rng, &spec)
        })
        .collect()
}

/// `count` seeded test functions with values uniform in `[-1, 1]`.
pub fn test_functions(seed: u64, n_states: usize, count: usize) -> Vec<StateFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| StateFunction::from_trusted((0..n_states).map(|_| rng.random_range(-1.0..=1.0)).collect()))
        .collect()
}
