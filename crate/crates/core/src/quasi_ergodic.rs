//! The quasi-ergodic distribution and exact conditioned time averages.
//!
//! Conditioned expectations are ratios of two quantities that both decay like
//! `θ₀^N`, so every sweep below renormalizes by powers of two at each step.

use serde::Serialize;

use crate::analysis::ChainAnalysis;
use crate::chain::{AbsorbedKernel, DiscreteMeasure, StateFunction};
use crate::error::{Error, Result};
use crate::linalg;

/// `ν_QE = (θ₀^{-t}/t) Σ_k νP_k(· P_{t-k}η)`.
pub fn nu_qe(analysis: &ChainAnalysis) -> DiscreteMeasure {
    let t = analysis.period();
    let mut sum = vec![0.0; analysis.len()];
    for k in 0..t {
        let pe = analysis.power(t - k).mul_vec(analysis.eta_e());
        linalg::axpy(&mut sum, 1.0, &linalg::hadamard(&analysis.nu_p(k), &pe));
    }
    let scale = analysis.theta0().powi(-(t as i32)) / t as f64;
    DiscreteMeasure::from_trusted(linalg::scale(&sum, scale))
}

fn check_inputs(kernel: &AbsorbedKernel, mu: &DiscreteMeasure, f: &StateFunction) -> Result<()> {
    kernel.check_len(mu.len())?;
    kernel.check_len(f.len())?;
    if f.sup_norm() > 1.0 {
        log::warn!("test function has sup norm {} > 1; the 1/N bound is stated for |f| <= 1", f.sup_norm());
    }
    Ok(())
}

/// Splits `x > 0` as `2^e · r` with `r ∈ [1, 2)`; rescaling by powers of two is exact.
fn binary_exponent(x: f64) -> i32 {
    x.log2().floor() as i32
}

/// `μP_m` rescaled by `2^{-e_m}`, with the exponents `e_m`.
fn forward_sweep(kernel: &AbsorbedKernel, mu: &[f64], n: usize) -> Result<(Vec<Vec<f64>>, Vec<i32>)> {
    let mut laws = Vec::with_capacity(n + 1);
    let mut exps = Vec::with_capacity(n + 1);
    let mut current = mu.to_vec();
    let mut exponent = 0;
    for m in 0..=n {
        if m > 0 {
            current = kernel.matrix().vec_mul(&current);
        }
        let mass: f64 = current.iter().sum();
        if mass <= 0.0 {
            return Err(Error::Extinct { n: m });
        }
        let e = binary_exponent(mass);
        current = linalg::scale(&current, (-e as f64).exp2());
        exponent += e;
        laws.push(current.clone());
        exps.push(exponent);
    }
    Ok((laws, exps))
}

/// `P_k𝟙` rescaled by `2^{-e_k}`, with the exponents `e_k`.
fn backward_sweep(kernel: &AbsorbedKernel, n: usize) -> Result<(Vec<Vec<f64>>, Vec<i32>)> {
    let mut survivals = Vec::with_capacity(n + 1);
    let mut exps = Vec::with_capacity(n + 1);
    let mut current = vec![1.0; kernel.len()];
    let mut exponent = 0;
    for k in 0..=n {
        if k > 0 {
            current = kernel.matrix().mul_vec(&current);
            let sup = linalg::sup_norm(&current);
            if sup <= 0.0 {
                return Err(Error::Extinct { n: k });
            }
            let e = binary_exponent(sup);
            current = linalg::scale(&current, (-e as f64).exp2());
            exponent += e;
        }
        survivals.push(current.clone());
        exps.push(exponent);
    }
    Ok((survivals, exps))
}

/// `μP_m(g)·2^{e}` relative to `μP_N𝟙`.
fn relative(pairing: f64, exponent: i32, final_mass: f64) -> f64 {
    pairing * (exponent as f64).exp2() / final_mass
}

/// `E_μ[(N+1)^{-1} Σ_{m≤N} f(X_m) | N < τ_∂]` from one forward and one backward sweep.
pub fn time_average_exact(kernel: &AbsorbedKernel, mu: &DiscreteMeasure, f: &StateFunction, n: usize) -> Result<f64> {
    check_inputs(kernel, mu, f)?;
    let (laws, la) = forward_sweep(kernel, mu.weights(), n)?;
    let (survivals, lb) = backward_sweep(kernel, n)?;
    let final_mass: f64 = laws[n].iter().sum();
    let mut total = 0.0;
    for m in 0..=n {
        let pairing = linalg::dot(&laws[m], &linalg::hadamard(f.values(), &survivals[n - m]));
        total += relative(pairing, la[m] + lb[n - m] - la[n], final_mass);
    }
    Ok(total / (n + 1) as f64)
}

/// Time averages and centred second moments for every `N ≤ n_max` from a single forward recursion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageSeries {
    /// `E_μ[(N+1)^{-1} Σ_{m≤N} f(X_m) | N < τ_∂]`.
    pub averages: Vec<f64>,
    /// `E_μ[((N+1)^{-1} Σ_{m≤N} (f(X_m) − c))² | N < τ_∂]`.
    pub second_moments: Vec<f64>,
}

/// Runs the recursion `S_{N+1} = S_N + f(X_{N+1})` on measures weighted by
/// `𝟙, S_N, (S_N − (N+1)c)²`; `c` is the centring constant of the second moment.
pub fn average_series(kernel: &AbsorbedKernel, mu: &DiscreteMeasure, f: &StateFunction, centre: f64, n_max: usize) -> Result<AverageSeries> {
    check_inputs(kernel, mu, f)?;
    let fv = f.values();
    let fbar: Vec<f64> = fv.iter().map(|v| v - centre).collect();
    let p = kernel.matrix();
    let mut law = mu.weights().to_vec();
    let mut first = linalg::hadamard(fv, &law);
    let mut centred = linalg::hadamard(&fbar, &law);
    let mut second = linalg::hadamard(&linalg::hadamard(&fbar, &fbar), &law);
    let mut averages = Vec::with_capacity(n_max + 1);
    let mut second_moments = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            law = p.vec_mul(&law);
            let moved = p.vec_mul(&centred);
            second = p.vec_mul(&second);
            for y in 0..law.len() {
                second[y] += 2.0 * fbar[y] * moved[y] + fbar[y] * fbar[y] * law[y];
            }
            first = p.vec_mul(&first);
            linalg::axpy(&mut first, 1.0, &linalg::hadamard(fv, &law));
            centred = moved;
            linalg::axpy(&mut centred, 1.0, &linalg::hadamard(&fbar, &law));
        }
        let mass: f64 = law.iter().sum();
        if mass <= 0.0 {
            return Err(Error::Extinct { n });
        }
        for v in [&mut law, &mut first, &mut centred, &mut second] {
            *v = linalg::scale(v, 1.0 / mass);
        }
        let count = (n + 1) as f64;
        averages.push(first.iter().sum::<f64>() / count);
        second_moments.push(second.iter().sum::<f64>() / (count * count));
    }
    Ok(AverageSeries { averages, second_moments })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QedRateReport {
    /// `ν_QE(f)`.
    pub limit: f64,
    /// `e(N) = |average_N − ν_QE(f)|` for `N = 0..=N_max`.
    pub errors: Vec<f64>,
    /// `sup_N (N+1)e(N)`.
    pub scaled_sup: f64,
    /// `Σ_i μ|_{A_i} P_{t-i}V`.
    pub v_pairing: f64,
    /// `Σ_i μ|_{A_i} η_{t-i}`.
    pub eta_pairing: f64,
    /// Smallest `C` with `(N+1)e(N) ≤ C · v_pairing / eta_pairing` over the range.
    pub constant: f64,
    /// No growth of `(N+1)e(N)` between the third and the last quarter of the range.
    pub bounded: bool,
}

/// Measures the `1/N` rate of the conditioned time average towards `ν_QE(f)`.
pub fn qed_rate_report(analysis: &ChainAnalysis, mu: &DiscreteMeasure, f: &StateFunction, n_max: usize) -> Result<QedRateReport> {
    analysis.kernel().check_len(mu.len())?;
    let t = analysis.period();
    let eta_pairing: f64 = (0..t)
        .map(|i| {
            let eta = analysis.eta_k(t - i);
            analysis.cyclic().members(i).iter().map(|&x| mu.weights()[x] * eta[x]).sum::<f64>()
        })
        .sum();
    if eta_pairing <= 0.0 {
        return Err(Error::EtaOrthogonal);
    }
    let v_pairing = analysis.class_pairing(mu.weights(), analysis.v_e())?;
    let limit = nu_qe(analysis).integrate(f.values());
    let series = average_series(analysis.kernel(), mu, f, limit, n_max)?;
    let errors: Vec<f64> = series.averages.iter().map(|a| (a - limit).abs()).collect();
    let scaled: Vec<f64> = errors.iter().enumerate().map(|(n, e)| (n + 1) as f64 * e).collect();
    let scaled_sup = scaled.iter().copied().fold(0.0, f64::max);
    let quarter = (n_max + 1) / 4;
    let bounded = if quarter == 0 {
        true
    } else {
        let third = scaled[2 * quarter..3 * quarter].iter().copied().fold(0.0, f64::max);
        let last = scaled[3 * quarter..].iter().copied().fold(0.0, f64::max);
        last <= third + 1e-9 * (1.0 + scaled_sup)
    };
    Ok(QedRateReport {
        limit,
        constant: scaled_sup * eta_pairing / v_pairing,
        errors,
        scaled_sup,
        v_pairing,
        eta_pairing,
        bounded,
    })
}

/// Absolute round-off allowance, relative to `‖f‖∞²`, when comparing second moments that vanish exactly.
pub const MOMENT_ROUNDOFF: f64 = 1e-15;

/// `E_μ[((N+1)^{-1} Σ_{m≤N} f̄(X_m))² | N < τ_∂]` with `f̄ = f − ν_QE(f)`.
///
/// The cross terms are accumulated backwards through
/// `g_m = P_1(f̄·P_{N-m-1}𝟙 + g_{m+1})`, `g_N = 0`.
pub fn second_moment_exact(analysis: &ChainAnalysis, mu: &DiscreteMeasure, f: &StateFunction, n: usize) -> Result<f64> {
    let kernel = analysis.kernel();
    check_inputs(kernel, mu, f)?;
    let centre = nu_qe(analysis).integrate(f.values());
    let fbar: Vec<f64> = f.values().iter().map(|v| v - centre).collect();
    let fbar2 = linalg::hadamard(&fbar, &fbar);
    let (laws, la) = forward_sweep(kernel, mu.weights(), n)?;
    let (survivals, lb) = backward_sweep(kernel, n)?;
    let final_mass: f64 = laws[n].iter().sum();
    let weight = |m: usize| relative(1.0, la[m] + lb[n - m] - la[n], final_mass);
    let mut total = 0.0;
    for m in 0..=n {
        total += linalg::dot(&laws[m], &linalg::hadamard(&fbar2, &survivals[n - m])) * weight(m);
    }
    // g_m is stored divided by 2^{lb[n-m]}, the scale of P_{N-m}𝟙.
    let mut g = vec![0.0; kernel.len()];
    for m in (0..n).rev() {
        let mut inner = linalg::hadamard(&fbar, &survivals[n - m - 1]);
        linalg::axpy(&mut inner, 1.0, &g);
        g = linalg::scale(&kernel.matrix().mul_vec(&inner), ((lb[n - m - 1] - lb[n - m]) as f64).exp2());
        total += 2.0 * linalg::dot(&laws[m], &linalg::hadamard(&fbar, &g)) * weight(m);
    }
    let count = (n + 1) as f64;
    Ok(total / (count * count))
}

/// Chebyshev bound on `P_μ(|(N+1)^{-1} Σ f(X_m) − ν_QE(f)| ≥ ε | N < τ_∂)`.
pub fn deviation_bound(second_moment: f64, epsilon: f64) -> f64 {
    (second_moment / (epsilon * epsilon)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::q_process;

    #[test]
    fn two_cycle_distribution_and_averages() {
        let a = ChainAnalysis::new(instances::two_cycle(0.8, 0.5)).unwrap();
        let qe = nu_qe(&a);
        assert!(linalg::l1_distance(qe.weights(), &[0.5, 0.5]) < 1e-14);
        let k = a.kernel();
        let mu = DiscreteMeasure::dirac(2, 0);
        let f = StateFunction::indicator(2, &[0]);
        for n in [0, 1, 2, 7, 10, 501] {
            let v = time_average_exact(k, &mu, &f, n).unwrap();
            let expected = (n / 2 + 1) as f64 / (n + 1) as f64;
            assert!((v - expected).abs() < 1e-13, "N={n}: {v} vs {expected}");
        }
        let r = qed_rate_report(&a, &mu, &f, 200).unwrap();
        for (n, e) in r.errors.iter().enumerate() {
            let expected = if n % 2 == 0 { 0.5 } else { 0.0 };
            assert!(((n + 1) as f64 * e - expected).abs() < 1e-11);
        }
        assert!(r.bounded);
        assert!((r.scaled_sup - 0.5).abs() < 1e-11);
        for n in [4, 9] {
            let m2 = second_moment_exact(&a, &mu, &f, n).unwrap();
            let parity = if n % 2 == 0 { 0.5 } else { 0.0 };
            assert!((m2 - parity * parity / ((n + 1) * (n + 1)) as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_function() {
        let a = ChainAnalysis::new(instances::lazy_pair(0.4)).unwrap();
        let mu = DiscreteMeasure::uniform(2);
        let one = StateFunction::constant(2, 1.0);
        for n in [0, 5, 60] {
            assert!((time_average_exact(a.kernel(), &mu, &one, n).unwrap() - 1.0).abs() < 1e-13);
            assert!(second_moment_exact(&a, &mu, &one, n).unwrap().abs() < 1e-25);
        }
        let r = qed_rate_report(&a, &mu, &one, 50).unwrap();
        assert!(r.errors.iter().all(|e| *e < 1e-13));
    }

    #[test]
    fn matches_corrected_invariant_measure() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let spec = instances::RandomChainSpec { n_states: 9, period: 3, survival: (0.6, 0.9), density: 0.5 };
        let a = ChainAnalysis::new(instances::random_block_cyclic(&mut rng, &spec)).unwrap();
        let qe = nu_qe(&a);
        assert!((qe.mass() - 1.0).abs() < 1e-12);
        for i in 0..3 {
            let mass: f64 = a.cyclic().members(i).iter().map(|&x| qe.weights()[x]).sum();
            assert!((mass - 1.0 / 3.0).abs() < 1e-12);
        }
        let qp = q_process::build_q_process(&a).unwrap();
        let inv = q_process::invariant_candidates(&a, &qp).unwrap();
        assert!(linalg::l1_distance(qe.weights(), &inv.corrected_measure) < 1e-10);
    }

    #[test]
    fn sweeps_agree_with_recursion() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(11);
        let spec = instances::RandomChainSpec { n_states: 8, period: 2, survival: (0.5, 0.8), density: 0.6 };
        let a = ChainAnalysis::new(instances::random_block_cyclic(&mut rng, &spec)).unwrap();
        let mu = DiscreteMeasure::dirac(8, 3);
        let f = StateFunction::new((0..8).map(|x| (x as f64 * 0.7).sin()).collect()).unwrap();
        let centre = nu_qe(&a).integrate(f.values());
        let series = average_series(a.kernel(), &mu, &f, centre, 300).unwrap();
        for n in [0, 1, 13, 300] {
            let avg = time_average_exact(a.kernel(), &mu, &f, n).unwrap();
            assert!((avg - series.averages[n]).abs() < 1e-12);
            let m2 = second_moment_exact(&a, &mu, &f, n).unwrap();
            assert!((m2 - series.second_moments[n]).abs() < 1e-12 * (1.0 + m2));
        }
        assert!(series.second_moments[200] <= series.second_moments[50]);
        let r = qed_rate_report(&a, &mu, &f, 1000).unwrap();
        assert!(r.bounded && r.constant.is_finite());
    }

    #[test]
    fn long_horizons_do_not_underflow() {
        let k = instances::two_cycle(0.1, 0.1);
        let mu = DiscreteMeasure::dirac(2, 1);
        let f = StateFunction::indicator(2, &[1]);
        assert!((time_average_exact(&k, &mu, &f, 2000).unwrap() - 1001.0 / 2001.0).abs() < 1e-12);
    }

    #[test]
    fn extinction_is_reported() {
        let k = AbsorbedKernel::new(vec![vec![0.0, 0.5], vec![0.0, 0.0]], vec!["a", "b"]).unwrap();
        let err = time_average_exact(&k, &DiscreteMeasure::dirac(2, 0), &StateFunction::constant(2, 1.0), 3);
        assert!(matches!(err, Err(Error::Extinct { .. })));
    }
}
