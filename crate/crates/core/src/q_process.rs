//! The chain conditioned never to be absorbed, as a Doob transform by the
//! periodic eigenfunction profile `η_k = θ₀^{-k}P_kη`.

use serde::Serialize;

use crate::analysis::ChainAnalysis;
use crate::chain::DiscreteMeasure;
use crate::eigen;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Eigenfunction values below this are rejected rather than divided by.
pub const ETA_UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaProfile {
    /// `eta_k[k] = θ₀^{-k}P_kη` on `E`, for `k = 0..t`.
    pub eta_k: Vec<Vec<f64>>,
    /// `‖θ₀^{-t}P_tη − η‖_∞`.
    pub periodicity_error: f64,
}

pub fn eta_profile(analysis: &ChainAnalysis) -> EtaProfile {
    let t = analysis.period();
    let eta_k = (0..t).map(|k| analysis.eta_k(k)).collect();
    let periodicity_error = linalg::sup_distance(&analysis.eta_k(t), analysis.eta_e());
    EtaProfile { eta_k, periodicity_error }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QProcessKernel {
    /// States of `E′` as indices into `E`, increasing.
    pub domain: Vec<usize>,
    pub labels: Vec<String>,
    /// Class of each domain state.
    pub class_of: Vec<usize>,
    pub period: usize,
    /// `h(x) = η_{t-i}(x)` for `x ∈ A_i ∩ E′`.
    pub h: Vec<f64>,
    /// Stochastic transition matrix on `E′`.
    pub matrix: Matrix,
    /// `max_x |Σ_y P̃(x,y) − 1|`.
    pub row_sum_error: f64,
}

impl QProcessKernel {
    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    /// Position of a state of `E` inside the domain.
    pub fn position(&self, x: usize) -> Option<usize> {
        self.domain.binary_search(&x).ok()
    }

    /// Restricts a measure on `E` to the domain; mass outside `E′` is an error.
    pub fn restrict_measure(&self, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
        let outside: f64 = (0..mu.len()).filter(|&x| self.position(x).is_none()).map(|x| mu.weights()[x]).sum();
        if outside > 0.0 {
            return Err(Error::InvalidMeasure(format!("mass {outside} outside the domain of the Q-process")));
        }
        Ok(self.domain.iter().map(|&x| mu.weights()[x]).collect())
    }

    /// Extends a vector on the domain to `E` by zero.
    pub fn embed(&self, values: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (&x, &v) in self.domain.iter().zip(values) {
            out[x] = v;
        }
        out
    }
}

/// `h(x) = η_{(t-i) mod t}(x)` for `x ∈ A_i`.
fn harmonic(analysis: &ChainAnalysis) -> Vec<f64> {
    let t = analysis.period();
    let profile: Vec<Vec<f64>> = (0..t).map(|k| analysis.eta_k(k)).collect();
    (0..analysis.len())
        .map(|x| profile[(t - analysis.cyclic().class_of(x)) % t][x])
        .collect()
}

/// `P̃(x,y) = P_1(x,y) η_{t-i-1}(y) / (θ₀ η_{t-i}(x))` on `E′ = {x ∈ A_i : η_{t-i}(x) > 0}`.
pub fn build_q_process(analysis: &ChainAnalysis) -> Result<QProcessKernel> {
    let h = harmonic(analysis);
    for (x, &v) in h.iter().enumerate() {
        if v > 0.0 && v < ETA_UNDERFLOW {
            return Err(Error::UnderflowEta { state: x, value: v });
        }
    }
    let domain: Vec<usize> = (0..h.len()).filter(|&x| h[x] > 0.0).collect();
    if domain.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let p = analysis.kernel().matrix();
    let theta0 = analysis.theta0();
    let matrix = Matrix::from_fn(domain.len(), domain.len(), |a, b| {
        let (x, y) = (domain[a], domain[b]);
        p[(x, y)] * h[y] / (theta0 * h[x])
    });
    let row_sum_error = matrix.row_sums().iter().fold(0.0_f64, |m, s| m.max((s - 1.0).abs()));
    Ok(QProcessKernel {
        labels: domain.iter().map(|&x| analysis.kernel().states()[x].clone()).collect(),
        class_of: domain.iter().map(|&x| analysis.cyclic().class_of(x)).collect(),
        period: analysis.period(),
        h: domain.iter().map(|&x| h[x]).collect(),
        domain,
        matrix,
        row_sum_error,
    })
}

/// Largest entrywise gap between `P̃^m` and `θ₀^{-m}P_m(x,y)h(y)/h(x)` over `m ≤ n_max·t`.
pub fn q_semigroup_check(qp: &QProcessKernel, analysis: &ChainAnalysis, n_max: usize) -> f64 {
    let step = analysis.kernel().matrix().scaled(1.0 / analysis.theta0());
    let d = qp.len();
    let mut normalized = Matrix::identity(analysis.len());
    let mut tilde = Matrix::identity(d);
    let mut worst: f64 = 0.0;
    for m in 0..=n_max * qp.period {
        if m > 0 {
            normalized = normalized.matmul(&step);
            tilde = tilde.matmul(&qp.matrix);
        }
        for a in 0..d {
            for b in 0..d {
                let closed = normalized[(qp.domain[a], qp.domain[b])] * qp.h[b] / qp.h[a];
                worst = worst.max((tilde[(a, b)] - closed).abs());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    /// `[(1−θ₀)/(1−θ₀ᵗ)] Σ_i νP_i(·η_{t-i})` on `E`.
    pub stated_measure: Vec<f64>,
    /// `(1/t) Σ_i θ₀^{-i}νP_i(·η_{t-i})` on `E`.
    pub corrected_measure: Vec<f64>,
    /// Stationary law of `P̃` from the dense eigensolver, on `E`.
    pub oracle_measure: Vec<f64>,
    pub stated_mass: f64,
    pub corrected_mass: f64,
    /// `‖πP̃ − π‖_1` for the two candidates.
    pub stated_residual_l1: f64,
    pub corrected_residual_l1: f64,
    /// The same residuals in total variation (half the L1 norm).
    pub stated_residual_tv: f64,
    pub corrected_residual_tv: f64,
    pub stated_oracle_l1: f64,
    pub corrected_oracle_l1: f64,
    /// `νP_i(η_{t-i})`, expected to equal `θ₀ⁱ`.
    pub pairings: Vec<f64>,
    /// Mass of the corrected measure on each class.
    pub corrected_class_masses: Vec<f64>,
}

fn invariance_residual(qp: &QProcessKernel, measure_e: &[f64]) -> f64 {
    let pi: Vec<f64> = qp.domain.iter().map(|&x| measure_e[x]).collect();
    linalg::l1_distance(&qp.matrix.vec_mul(&pi), &pi)
}

/// Both closed-form invariant measures of the Q-process next to the eigensolver's answer.
pub fn invariant_candidates(analysis: &ChainAnalysis, qp: &QProcessKernel) -> Result<InvariantReport> {
    let t = analysis.period();
    let n = analysis.len();
    let theta0 = analysis.theta0();
    let mut raw = vec![0.0; n];
    let mut weighted = vec![0.0; n];
    let mut pairings = Vec::with_capacity(t);
    for i in 0..t {
        let term = linalg::hadamard(&analysis.nu_p(i), &analysis.eta_k(t - i));
        pairings.push(term.iter().sum());
        linalg::axpy(&mut raw, 1.0, &term);
        linalg::axpy(&mut weighted, theta0.powi(-(i as i32)), &term);
    }
    // (1−θ₀)/(1−θ₀ᵗ) written as 1/(1+θ₀+…+θ₀^{t-1}), which stays finite at θ₀ = 1.
    let prefactor = 1.0 / (0..t).map(|i| theta0.powi(i as i32)).sum::<f64>();
    let stated_measure = linalg::scale(&raw, prefactor);
    let corrected_measure = linalg::scale(&weighted, 1.0 / t as f64);
    let oracle = eigen::stationary_distribution(&qp.matrix)?;
    let oracle_measure = qp.embed(&oracle, n);
    let stated_residual_l1 = invariance_residual(qp, &stated_measure);
    let corrected_residual_l1 = invariance_residual(qp, &corrected_measure);
    let corrected_class_masses = (0..t)
        .map(|i| analysis.cyclic().members(i).iter().map(|&x| corrected_measure[x]).sum())
        .collect();
    Ok(InvariantReport {
        stated_mass: stated_measure.iter().sum(),
        corrected_mass: corrected_measure.iter().sum(),
        stated_residual_tv: stated_residual_l1 / 2.0,
        corrected_residual_tv: corrected_residual_l1 / 2.0,
        stated_residual_l1,
        corrected_residual_l1,
        stated_oracle_l1: linalg::l1_distance(&stated_measure, &oracle_measure),
        corrected_oracle_l1: linalg::l1_distance(&corrected_measure, &oracle_measure),
        stated_measure,
        corrected_measure,
        oracle_measure,
        pairings,
        corrected_class_masses,
    })
}

/// `lim_n μ′P̃^{nt+j}` from the stationary law `π`: `lim_n P̃^{nt}(x,y) = t·π(y)` on same-class pairs.
pub fn oracle_limits(qp: &QProcessKernel, pi: &[f64], mu_prime: &[f64]) -> Vec<Vec<f64>> {
    let t = qp.period;
    let d = qp.len();
    let mut class_mass = vec![0.0; t];
    for a in 0..d {
        class_mass[qp.class_of[a]] += mu_prime[a];
    }
    let mut limit: Vec<f64> = (0..d).map(|b| t as f64 * pi[b] * class_mass[qp.class_of[b]]).collect();
    let mut out = Vec::with_capacity(t);
    for j in 0..t {
        if j > 0 {
            limit = qp.matrix.vec_mul(&limit);
        }
        out.push(limit.clone());
    }
    out
}

/// `Σ_i θ₀^{-(i+j)} μ′(A_i) νP_{i+j}(·η_{2t-i-j})` on the domain, the limit obtained from the periodic limit theorem.
pub fn formula_limit(analysis: &ChainAnalysis, qp: &QProcessKernel, mu_prime: &[f64], j: usize, coefficient: impl Fn(usize) -> f64) -> Vec<f64> {
    let t = analysis.period();
    let mut class_mass = vec![0.0; t];
    for (a, &w) in mu_prime.iter().enumerate() {
        class_mass[qp.class_of[a]] += w;
    }
    let mut out = vec![0.0; analysis.len()];
    for (i, &mass) in class_mass.iter().enumerate() {
        if mass > 0.0 {
            let term = linalg::hadamard(&analysis.nu_p(i + j), &analysis.eta_k(2 * t - i - j));
            linalg::axpy(&mut out, coefficient(i) * mass, &term);
        }
    }
    qp.domain.iter().map(|&x| out[x]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    /// `distances[n][j] = ‖μ′P̃^{nt+j} − L_j‖_TV` for `n = 0..=n_max`.
    pub distances: Vec<Vec<f64>>,
    pub noise_floor: f64,
    pub alpha: f64,
    pub fitted_rate: Option<f64>,
    pub rate_ok: bool,
    /// `max_j ‖L_j − L_j^{formula}‖_TV` with coefficients `θ₀^{-(i+j)}`.
    pub formula_gap: f64,
    /// Total mass of the limit written with the coefficients `θ₀^{t-i}`, per `j`.
    pub stated_coefficient_mass: Vec<f64>,
    /// `max_j ‖L_j − L_j^{stated}‖_TV` with coefficients `θ₀^{t-i}`.
    pub stated_coefficient_gap: f64,
    pub converged: bool,
}

/// Exponential contraction of `μ′P̃^{nt+j}` towards its `j`-indexed limit.
pub fn contraction_report(
    analysis: &ChainAnalysis,
    qp: &QProcessKernel,
    mu_prime: &DiscreteMeasure,
    n_max: usize,
) -> Result<ContractionReport> {
    let start = qp.restrict_measure(mu_prime)?;
    let mass: f64 = start.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMeasure(format!("initial law has mass {mass}")));
    }
    let t = qp.period;
    let theta0 = analysis.theta0();
    let pi = eigen::stationary_distribution(&qp.matrix)?;
    let limits = oracle_limits(qp, &pi, &start);
    let mut formula_gap: f64 = 0.0;
    let mut stated_coefficient_gap: f64 = 0.0;
    let mut stated_coefficient_mass = Vec::with_capacity(t);
    for (j, limit) in limits.iter().enumerate() {
        let derived = formula_limit(analysis, qp, &start, j, |i| theta0.powi(-((i + j) as i32)));
        formula_gap = formula_gap.max(linalg::tv_distance(limit, &derived));
        let stated = formula_limit(analysis, qp, &start, j, |i| theta0.powi((t - i) as i32));
        stated_coefficient_mass.push(stated.iter().sum());
        stated_coefficient_gap = stated_coefficient_gap.max(linalg::tv_distance(limit, &stated));
    }
    let mut distances = Vec::with_capacity(n_max + 1);
    let mut law = start;
    for n in 0..=n_max {
        let mut row = Vec::with_capacity(t);
        for (j, limit) in limits.iter().enumerate() {
            if n > 0 || j > 0 {
                law = qp.matrix.vec_mul(&law);
            }
            row.push(linalg::tv_distance(&law, limit));
        }
        distances.push(row);
    }
    let noise_floor = 1e-12;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, row) in distances.iter().enumerate() {
        let worst = row.iter().copied().fold(0.0, f64::max);
        if worst > noise_floor {
            xs.push(n as f64);
            ys.push(worst.ln());
        }
    }
    let fitted_rate = if xs.len() >= 3 { linalg::ols_slope(&xs, &ys).map(f64::exp) } else { None };
    let alpha = analysis.certificate().alpha;
    let last = distances.last().map_or(0.0, |r| r.iter().copied().fold(0.0, f64::max));
    let first = distances[0].iter().copied().fold(0.0, f64::max);
    Ok(ContractionReport {
        converged: last <= noise_floor.max(first * alpha.max(0.5).powi(n_max as i32 / 2)),
        distances,
        noise_floor,
        alpha,
        rate_ok: fitted_rate.is_none_or(|r| r <= alpha + crate::quasi_limit::RATE_SLACK),
        fitted_rate,
        formula_gap,
        stated_coefficient_mass,
        stated_coefficient_gap,
    })
}
