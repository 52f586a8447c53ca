//! Periodic quasi-limiting profiles: the limit of `θ₀^{-(nt+j)}P_{nt+j}`, its
//! certified geometric error, conditional laws and their `j`-indexed limits,
//! and the Lyapunov function `φ₂`.

use serde::Serialize;

use crate::analysis::ChainAnalysis;
use crate::chain::{AbsorbedKernel, DiscreteMeasure, StateFunction};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::spectral::{self, RESOLUTION};

/// Coefficient `θ₀^{-(t+j)}P_{t-k}η(x)` and measure `νP_{k+j}` of the limit of
/// `θ₀^{-(nt+j)}P_{nt+j}f(x)` for `x ∈ A_k`.
pub fn limit_profile(analysis: &ChainAnalysis, j: usize, x: usize) -> Result<(f64, Vec<f64>)> {
    let t = analysis.period();
    if j >= t {
        return Err(Error::IndexOutOfRange { index: j, bound: t });
    }
    if x >= analysis.len() {
        return Err(Error::IndexOutOfRange { index: x, bound: analysis.len() });
    }
    let k = analysis.cyclic().class_of(x);
    let pe = analysis.power(t - k).mul_vec(analysis.eta_e());
    let coefficient = analysis.theta0().powi(-((t + j) as i32)) * pe[x];
    Ok((coefficient, analysis.nu_p(k + j)))
}

/// The matrix `L_j(x,y)` of the limit profile: row `x` is the coefficient times the measure.
pub fn limit_matrix(analysis: &ChainAnalysis, j: usize) -> Result<Matrix> {
    let n = analysis.len();
    let mut out = Matrix::zeros(n, n);
    for x in 0..n {
        let (coef, measure) = limit_profile(analysis, j, x)?;
        for y in 0..n {
            out[(x, y)] = coef * measure[y];
        }
    }
    Ok(out)
}

/// Residuals of the periodic limit theorem for one function `f`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub n_max: usize,
    /// `residuals[n-1][j] = R(n,j)`.
    pub residuals: Vec<Vec<f64>>,
    /// Residuals at or below this level are counted as zero.
    pub noise_floor: f64,
    pub alpha: f64,
    pub c_q_prime: f64,
    /// `sup_{n,j} R(n,j)/αⁿ`, infinite when a positive residual meets `α = 0`.
    pub ratio_sup: f64,
    /// `sup_{n,j} R(n,j)/α^{n-1}`.
    pub ratio_sup_shifted: f64,
    pub holds: bool,
    pub holds_shifted: bool,
    /// `exp` of the least-squares slope of `log max_j R(n,j)` over the resolved `n`.
    pub fitted_rate: Option<f64>,
    pub rate_ok: bool,
    /// States `x ∈ A_k` with `P_{t-k}Ṽ(x) = 0`, which are left out of every ratio.
    pub skipped_states: Vec<usize>,
}

/// Tolerance added to `α` when comparing the fitted rate.
pub const RATE_SLACK: f64 = 0.02;

struct ProfileScan {
    weights: Vec<f64>,
    skipped: Vec<usize>,
    limits: Vec<Matrix>,
    scale: f64,
}

fn profile_scan(analysis: &ChainAnalysis) -> Result<ProfileScan> {
    let t = analysis.period();
    let n = analysis.len();
    let mut weights = vec![0.0; n];
    let mut skipped = Vec::new();
    for x in 0..n {
        let k = analysis.cyclic().class_of(x);
        weights[x] = analysis.power(t - k).mul_vec(analysis.v_e())[x];
        if weights[x] <= 0.0 {
            skipped.push(x);
        }
    }
    let limits = (0..t).map(|j| limit_matrix(analysis, j)).collect::<Result<Vec<_>>>()?;
    let mut scale: f64 = 1.0;
    for l in &limits {
        for x in 0..n {
            if weights[x] > 0.0 {
                scale = scale.max(linalg::l1_norm(l.row(x)) / weights[x]);
            }
        }
    }
    Ok(ProfileScan { weights, skipped, limits, scale })
}

/// Calls `visit(n, j, θ₀^{-(nt+j)}P_{nt+j})` for `n = 1..=n_max`, `j < t`.
fn walk_normalized_powers(analysis: &ChainAnalysis, n_max: usize, mut visit: impl FnMut(usize, usize, &Matrix)) {
    let t = analysis.period();
    let step = analysis.kernel().matrix().scaled(1.0 / analysis.theta0());
    let mut a = analysis.power(t).scaled(analysis.theta0().powi(-(t as i32)));
    for n in 1..=n_max {
        for j in 0..t {
            if j > 0 {
                a = a.matmul(&step);
            }
            visit(n, j, &a);
        }
        a = a.matmul(&step);
    }
}

fn summarize(analysis: &ChainAnalysis, residuals: Vec<Vec<f64>>, noise_floor: f64, skipped: Vec<usize>) -> DecayReport {
    let cert = analysis.certificate();
    let alpha = cert.alpha;
    let mut ratio_sup: f64 = 0.0;
    let mut ratio_sup_shifted: f64 = 0.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, row) in residuals.iter().enumerate() {
        let n = idx + 1;
        let worst = row.iter().copied().fold(0.0, f64::max);
        if worst <= noise_floor {
            continue;
        }
        let ratio = |p: i32| if alpha.powi(p) > 0.0 { worst / alpha.powi(p) } else { f64::INFINITY };
        ratio_sup = ratio_sup.max(ratio(n as i32));
        ratio_sup_shifted = ratio_sup_shifted.max(ratio(n as i32 - 1));
        xs.push(n as f64);
        ys.push(worst.ln());
    }
    let fitted_rate = if xs.len() >= 3 { linalg::ols_slope(&xs, &ys).map(f64::exp) } else { None };
    let c = cert.c_q_prime * (1.0 + 1e-9);
    DecayReport {
        n_max: residuals.len(),
        residuals,
        noise_floor,
        alpha,
        c_q_prime: cert.c_q_prime,
        ratio_sup,
        ratio_sup_shifted,
        holds: ratio_sup <= c,
        holds_shifted: ratio_sup_shifted <= c,
        fitted_rate,
        rate_ok: fitted_rate.is_none_or(|r| r <= alpha + RATE_SLACK),
        skipped_states: skipped,
    }
}

/// `R(n,j) = max_x |θ₀^{-(nt+j)}P_{nt+j}f(x) − θ₀^{-(t+j)}P_{t-k}η(x)νP_{k+j}f| / P_{t-k}Ṽ(x)`
/// for `n ≤ n_max`, compared with `C'_Q αⁿ`.
pub fn verify_main_estimate(analysis: &ChainAnalysis, f: &StateFunction, n_max: usize) -> Result<DecayReport> {
    if !spectral::bv_membership(analysis, f)? {
        return Err(Error::NotInBV);
    }
    let scan = profile_scan(analysis)?;
    let t = analysis.period();
    let targets: Vec<Vec<f64>> = scan.limits.iter().map(|l| l.mul_vec(f.values())).collect();
    let mut residuals = vec![vec![0.0; t]; n_max];
    walk_normalized_powers(analysis, n_max, |n, j, a| {
        let af = a.mul_vec(f.values());
        let mut worst: f64 = 0.0;
        for x in 0..af.len() {
            if scan.weights[x] > 0.0 {
                worst = worst.max((af[x] - targets[j][x]).abs() / scan.weights[x]);
            }
        }
        residuals[n - 1][j] = worst;
    });
    let floor = RESOLUTION * scan.scale * (1.0 + f.sup_norm());
    Ok(summarize(analysis, residuals, floor, scan.skipped))
}

/// [`verify_main_estimate`] maximized over the basis functions `𝟙_y`, `y ∈ E`.
///
/// Every `𝟙_y` lies in `B_V` because `V ≥ 1` and the kernel is sub-Markov;
/// the signs `±𝟙_y` give the same residuals.
pub fn certify_main_estimate(analysis: &ChainAnalysis, n_max: usize) -> Result<DecayReport> {
    let scan = profile_scan(analysis)?;
    let t = analysis.period();
    let n = analysis.len();
    let mut residuals = vec![vec![0.0; t]; n_max];
    walk_normalized_powers(analysis, n_max, |step, j, a| {
        let l = &scan.limits[j];
        let mut worst: f64 = 0.0;
        for x in 0..n {
            if scan.weights[x] > 0.0 {
                let row_max = a.row(x).iter().zip(l.row(x)).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
                worst = worst.max(row_max / scan.weights[x]);
            }
        }
        residuals[step - 1][j] = worst;
    });
    let floor = RESOLUTION * scan.scale;
    Ok(summarize(analysis, residuals, floor, scan.skipped))
}

/// `ℙ_μ(X_n ∈ · | n < τ_∂) = μP_n / μP_n𝟙_E`, renormalized at every step.
pub fn conditional_law(kernel: &AbsorbedKernel, mu: &DiscreteMeasure, n: usize) -> Result<DiscreteMeasure> {
    kernel.check_len(mu.len())?;
    let mut w = mu.weights().to_vec();
    for m in 0..=n {
        if m > 0 {
            w = kernel.matrix().vec_mul(&w);
        }
        let mass: f64 = w.iter().sum();
        if mass <= 0.0 {
            return Err(Error::Extinct { n: m });
        }
        w = linalg::scale(&w, 1.0 / mass);
    }
    Ok(DiscreteMeasure::from_trusted(w))
}

/// `Σ_i (μ|_{A_i}P_{t-i}η) νP_{i+j}`, the unnormalized `j`-th limit of the conditional laws.
pub fn limit_measure(analysis: &ChainAnalysis, mu: &DiscreteMeasure, j: usize) -> Result<Vec<f64>> {
    let t = analysis.period();
    if j >= t {
        return Err(Error::IndexOutOfRange { index: j, bound: t });
    }
    let weights = analysis.visible_eta_weights(mu.weights())?;
    let mut out = vec![0.0; analysis.len()];
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            linalg::axpy(&mut out, *w, &analysis.nu_p(i + j));
        }
    }
    Ok(out)
}

/// Limit of `ℙ_μ(X_{nt+j} ∈ · | nt+j < τ_∂)` as `n → ∞`.
pub fn conditional_limit(analysis: &ChainAnalysis, mu: &DiscreteMeasure, j: usize) -> Result<DiscreteMeasure> {
    let raw = limit_measure(analysis, mu, j)?;
    let mass: f64 = raw.iter().sum();
    if mass <= 0.0 {
        return Err(Error::EtaOrthogonal);
    }
    Ok(DiscreteMeasure::from_trusted(linalg::scale(&raw, 1.0 / mass)))
}

/// Smallest `n ≥ 0` with `C'_Q θ₀^{-4t} αⁿ (Σ_iμ|_{A_i}P_{t-i}V)/(Σ_iμ|_{A_i}P_{t-i}η) ≤ 1/2`.
pub fn hyp_main_threshold(analysis: &ChainAnalysis, mu: &DiscreteMeasure) -> Result<usize> {
    let eta_mass: f64 = analysis.visible_eta_weights(mu.weights())?.iter().sum();
    let v_mass = analysis.class_pairing(mu.weights(), analysis.v_e())?;
    let cert = analysis.certificate();
    let lead = cert.c_q_prime * cert.theta0.powi(-4 * analysis.period() as i32) * v_mass / eta_mass;
    if lead <= 0.5 {
        return Ok(0);
    }
    if cert.alpha == 0.0 {
        return Ok(1);
    }
    let mut n = ((2.0 * lead).ln() / -cert.alpha.ln()).ceil().max(0.0) as usize;
    while n > 0 && lead * cert.alpha.powi(n as i32 - 1) <= 0.5 {
        n -= 1;
    }
    while lead * cert.alpha.powi(n as i32) > 0.5 {
        n += 1;
    }
    Ok(n)
}

/// Outcome of the test for convergence of the conditional laws to the QSD.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCriterion {
    /// `c_i = θ₀^{i} μ|_{A_i}P_{t-i}η`; the conditional laws converge to the QSD iff these agree.
    pub class_constants: Vec<f64>,
    pub holds: bool,
    /// `θ₀^{-i} μ|_{A_i}P_{t-i}η`, the exponent with the opposite sign.
    pub inverse_constants: Vec<f64>,
    pub inverse_holds: bool,
    /// Largest pairwise L1 distance between the `t` conditional limits.
    pub limit_spread: f64,
    /// `max_j ‖conditional_limit(μ, j) − ν_QS‖_1`.
    pub distance_to_qsd: f64,
}

/// Relative tolerance on the equality of the class constants.
pub const CRITERION_TOLERANCE: f64 = 1e-9;

/// The conditional laws converge (to the QSD) iff `θ₀^{-i}μ|_{A_i}P_{t-i}η` does not depend on `i`.
///
/// Classes on which `μ` puts no mass contribute `c_i = 0`, so mass on a strict
/// subset of the classes fails the test whenever `t ≥ 2`.
pub fn qsd_convergence_criterion(analysis: &ChainAnalysis, mu: &DiscreteMeasure) -> Result<ConvergenceCriterion> {
    let weights = analysis.visible_eta_weights(mu.weights())?;
    let theta0 = analysis.theta0();
    let scaled = |sign: i32| -> Vec<f64> { weights.iter().enumerate().map(|(i, w)| theta0.powi(sign * i as i32) * w).collect() };
    let agree = |c: &[f64]| {
        let top = c.iter().copied().fold(0.0, f64::max);
        let bottom = c.iter().copied().fold(f64::INFINITY, f64::min);
        top - bottom <= CRITERION_TOLERANCE * top
    };
    let class_constants = scaled(1);
    let inverse_constants = scaled(-1);
    let holds = agree(&class_constants);
    let inverse_holds = agree(&inverse_constants);
    let t = analysis.period();
    let limits = (0..t).map(|j| conditional_limit(analysis, mu, j)).collect::<Result<Vec<_>>>()?;
    let nu_qs = crate::qsd::qsd_from_iterated(
        analysis.kernel(),
        analysis.cyclic(),
        &DiscreteMeasure::from_trusted(analysis.certificate().nu.clone()),
    )?;
    let mut limit_spread: f64 = 0.0;
    let mut distance_to_qsd: f64 = 0.0;
    for a in &limits {
        distance_to_qsd = distance_to_qsd.max(a.l1_distance(&nu_qs));
        for b in &limits {
            limit_spread = limit_spread.max(a.l1_distance(b));
        }
    }
    Ok(ConvergenceCriterion { class_constants, holds, inverse_constants, inverse_holds, limit_spread, distance_to_qsd })
}

/// Which kernel the return condition defining `n₀` is read with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepReading {
    /// `inf_K θ₂^{-n₀t} Q_{n₀}𝟙_K ≥ 1`.
    Iterated,
    /// `inf_K θ₂^{-n₀t} P_{n₀}𝟙_K ≥ 1`.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phi2Options {
    pub theta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub reading: StepReading,
    pub n0_max: usize,
}

impl Default for Phi2Options {
    fn default() -> Self {
        Phi2Options { theta2: None, epsilon: None, reading: StepReading::Iterated, n0_max: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovWitness {
    pub theta2: f64,
    pub epsilon: f64,
    /// Members of `K = {η ≥ ε, V ≤ 1/ε}` as indices into `A_0`.
    pub k_set: Vec<usize>,
    pub n0: usize,
    pub reading: StepReading,
    /// `φ₂` on `A_0`.
    pub phi2: Vec<f64>,
}

/// Default `θ₂`: the geometric midpoint of `θ₀α^{1/t}` and `θ₀`, or `θ₀/2` when `α = 0`.
pub fn default_theta2(theta0: f64, alpha: f64, period: usize) -> f64 {
    if alpha > 0.0 {
        theta0 * alpha.powf(0.5 / period as f64)
    } else {
        theta0 / 2.0
    }
}

fn k_set(eta: &[f64], v: &[f64], epsilon: f64) -> Vec<usize> {
    (0..eta.len()).filter(|&x| eta[x] >= epsilon && v[x] <= 1.0 / epsilon).collect()
}

/// Builds `φ₂ = [(θ₂^{-t}−1)/(θ₂^{-n₀t}−1)] Σ_{k<n₀} θ₂^{-kt}Q_k𝟙_K`.
pub fn build_phi2(analysis: &ChainAnalysis, options: &Phi2Options) -> Result<LyapunovWitness> {
    let cert = analysis.certificate();
    let t = analysis.period();
    let theta0 = cert.theta0;
    let theta2 = options.theta2.unwrap_or_else(|| default_theta2(theta0, cert.alpha, t));
    if !(theta2 > 0.0 && theta2 < 1.0) || (theta0 / theta2).powi(t as i32) * cert.alpha >= 1.0 {
        return Err(Error::NoValidTheta2);
    }
    let nu_mass = |k: &[usize]| k.iter().map(|&x| cert.nu[x]).sum::<f64>();
    let (epsilon, k) = match options.epsilon {
        Some(e) => {
            let k = k_set(&cert.eta, &cert.v, e);
            if nu_mass(&k) < 0.5 {
                return Err(Error::KTooSmall);
            }
            (e, k)
        }
        None => (0..1075)
            .map(|m| 2f64.powi(-m))
            .map(|e| (e, k_set(&cert.eta, &cert.v, e)))
            .find(|(_, k)| nu_mass(k) >= 0.5)
            .ok_or(Error::KTooSmall)?,
    };
    let q = analysis.iterated().matrix();
    let m = q.rows();
    let indicator = StateFunction::indicator(m, &k).values().to_vec();
    let theta2_t = theta2.powi(t as i32);

    let n0 = match options.reading {
        StepReading::Iterated => {
            let step = q.scaled(1.0 / theta2_t);
            let mut w = indicator.clone();
            (1..=options.n0_max).find(|_| {
                w = step.mul_vec(&w);
                k.iter().all(|&x| w[x] >= 1.0)
            })
        }
        StepReading::Literal => {
            let p = analysis.kernel().matrix().scaled(1.0 / theta2_t);
            let a0 = analysis.cyclic().members(0);
            let mut w = analysis.cyclic().embed(0, &indicator);
            (1..=options.n0_max).find(|_| {
                w = p.mul_vec(&w);
                k.iter().all(|&x| w[a0[x]] >= 1.0)
            })
        }
    }
    .ok_or(Error::NoReturnTime(options.n0_max))?;

    let step = q.scaled(1.0 / theta2_t);
    let mut term = indicator;
    let mut sum = vec![0.0; m];
    for k in 0..n0 {
        if k > 0 {
            term = step.mul_vec(&term);
        }
        linalg::axpy(&mut sum, 1.0, &term);
    }
    let prefactor = (1.0 / theta2_t - 1.0) / (theta2_t.powi(-(n0 as i32)) - 1.0);
    let phi2 = linalg::scale(&sum, prefactor);
    Ok(LyapunovWitness { theta2, epsilon, k_set: k, n0, reading: options.reading, phi2 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    pub nu_k: f64,
    /// `min_{x∈K} θ₂^{-n₀t}Q_{n₀}𝟙_K(x)`.
    pub return_min: f64,
    /// `min_x (Q_1φ₂ − θ₂ᵗφ₂)(x)`.
    pub lyapunov_slack: f64,
    pub phi2_min: f64,
    pub phi2_max: f64,
    pub phi2_min_on_k: f64,
    /// `(θ₂^{-t}−1)/((θ₂^{-n₀t}−1)(1−θ₀/θ₂))`, defined only when `θ₀ < θ₂`.
    pub ratio_constant: Option<f64>,
    /// `max_x φ₂(x) − ratio_constant·η(x)` when the constant is defined.
    pub ratio_slack: Option<f64>,
    /// `[(θ₂^{-t}−1)/(θ₂^{-n₀t}−1)] ε^{-1} Σ_{k<n₀}(θ₀/θ₂)^{kt}`, valid for every `θ₂`.
    pub finite_sum_constant: f64,
    pub finite_sum_slack: f64,
    pub passed: bool,
}

/// Entrywise checks of the witness properties.
pub fn check_witness(analysis: &ChainAnalysis, w: &LyapunovWitness) -> WitnessReport {
    let cert = analysis.certificate();
    let t = analysis.period() as i32;
    let q = analysis.iterated().matrix();
    let theta2_t = w.theta2.powi(t);
    let nu_k: f64 = w.k_set.iter().map(|&x| cert.nu[x]).sum();
    let mut ret = StateFunction::indicator(q.rows(), &w.k_set).values().to_vec();
    for _ in 0..w.n0 {
        ret = linalg::scale(&q.mul_vec(&ret), 1.0 / theta2_t);
    }
    let return_min = w.k_set.iter().map(|&x| ret[x]).fold(f64::INFINITY, f64::min);
    let q_phi = q.mul_vec(&w.phi2);
    let lyapunov_slack = q_phi.iter().zip(&w.phi2).fold(f64::INFINITY, |s, (a, b)| s.min(a - theta2_t * b));
    let phi2_min = w.phi2.iter().copied().fold(f64::INFINITY, f64::min);
    let phi2_max = w.phi2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let phi2_min_on_k = w.k_set.iter().map(|&x| w.phi2[x]).fold(f64::INFINITY, f64::min);
    let prefactor = (1.0 / theta2_t - 1.0) / (theta2_t.powi(-(w.n0 as i32)) - 1.0);
    let excess = |c: f64| w.phi2.iter().zip(&cert.eta).fold(f64::NEG_INFINITY, |s, (p, e)| s.max(p - c * e));
    let ratio_constant = (cert.theta0 < w.theta2).then(|| prefactor / (1.0 - cert.theta0 / w.theta2));
    let ratio_slack = ratio_constant.map(excess);
    let growth = (cert.theta0 / w.theta2).powi(t);
    let finite_sum_constant = prefactor / w.epsilon * (0..w.n0).map(|k| growth.powi(k as i32)).sum::<f64>();
    let finite_sum_slack = excess(finite_sum_constant);
    let tol = 1e-12;
    let passed = nu_k >= 0.5
        && (w.reading == StepReading::Literal || return_min >= 1.0 - tol)
        && lyapunov_slack >= -tol
        && phi2_min >= -tol
        && phi2_max <= 1.0 + tol
        && phi2_min_on_k > 0.0
        && ratio_slack.is_none_or(|s| s <= tol)
        && finite_sum_slack <= tol;
    WitnessReport {
        nu_k,
        return_min,
        lyapunov_slack,
        phi2_min,
        phi2_max,
        phi2_min_on_k,
        ratio_constant,
        ratio_slack,
        finite_sum_constant,
        finite_sum_slack,
        passed,
    }
}
