//! Perron data of the iterated kernel, the mixing certificate `(C_Q, α)`,
//! and the classification of the spectrum of `P_1`.

use num_complex::Complex64;
use serde::Serialize;

use crate::analysis::ChainAnalysis;
use crate::chain::{AbsorbedKernel, StateFunction};
use crate::eigen::{self, EigenPair};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// A second eigenvalue this close (in modulus) to the Perron root is treated as peripheral.
pub const PERIPHERAL_TOLERANCE: f64 = 1e-9;
/// Largest iterated kernel handled by the dense eigensolver under [`PerronMethod::Auto`].
pub const DENSE_LIMIT: usize = 512;
/// Subdominant moduli below this fraction of the Perron root are round-off of an exact zero.
pub const ZERO_EIGENVALUE_SNAP: f64 = 1e-12;
/// Residuals below this multiple of the natural scale are not resolvable in double precision.
pub const RESOLUTION: f64 = 1e-11;
/// Tolerance of the ring and bulk checks in [`classify_spectrum`].
pub const SPECTRUM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PerronMethod {
    Dense,
    Power,
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOptions {
    pub method: PerronMethod,
    pub k_max: usize,
    pub power_tolerance: f64,
    pub power_max_iter: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { method: PerronMethod::Auto, k_max: 200, power_tolerance: 1e-13, power_max_iter: 1_000_000 }
    }
}

/// Perron root `θ₀ᵗ` of the iterated kernel with its eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronData {
    pub rho: f64,
    /// Right eigenvector, normalized by `ν(η) = 1`.
    pub eta: Vec<f64>,
    /// Left eigenvector, a probability.
    pub nu: Vec<f64>,
    /// Largest modulus among the other eigenvalues.
    pub second_modulus: f64,
    pub method: PerronMethod,
}

fn subdominant(q: &Matrix) -> Result<(f64, f64)> {
    let vals = eigen::eigenvalues(q)?;
    let rho = vals[0].norm();
    let second = vals.get(1).map_or(0.0, |v| v.norm());
    Ok((rho, second))
}

fn perron_dense(q: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let right = eigen::eigen_decomposition(q)?;
    let left = eigen::eigen_decomposition(&q.transpose())?;
    Ok((eigen::positive_part(&right[0].vector), eigen::positive_part(&left[0].vector)))
}

fn power_iterate(apply: impl Fn(&[f64]) -> Vec<f64>, n: usize, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let w = apply(&v);
        let norm = linalg::l1_norm(&w);
        if norm == 0.0 {
            return Err(Error::ZeroKernel);
        }
        let w = linalg::scale(&w, 1.0 / norm);
        if linalg::l1_distance(&w, &v) <= tol {
            return Ok(w);
        }
        v = w;
    }
    Err(Error::NonConvergence(max_iter))
}

/// Perron eigenvalue and eigenvectors of an aperiodic irreducible kernel.
pub fn compute_perron(q: &AbsorbedKernel, options: &SpectralOptions) -> Result<PerronData> {
    let m = q.matrix();
    if m.max_abs() == 0.0 {
        return Err(Error::ZeroKernel);
    }
    let (rho_dense, mut second) = subdominant(m)?;
    if rho_dense - second <= PERIPHERAL_TOLERANCE {
        return Err(Error::PeripheralMultiplicity {
            perron: rho_dense,
            second,
            tolerance: PERIPHERAL_TOLERANCE,
        });
    }
    if second <= ZERO_EIGENVALUE_SNAP * rho_dense {
        second = 0.0;
    }
    let method = match options.method {
        PerronMethod::Auto if q.len() <= DENSE_LIMIT => PerronMethod::Dense,
        PerronMethod::Auto => PerronMethod::Power,
        other => other,
    };
    let (eta, nu) = match method {
        PerronMethod::Power => {
            let n = q.len();
            let eta = power_iterate(|v| m.mul_vec(v), n, options.power_tolerance, options.power_max_iter)?;
            let nu = power_iterate(|v| m.vec_mul(v), n, options.power_tolerance, options.power_max_iter)?;
            (eta, nu)
        }
        _ => perron_dense(m)?,
    };
    let nu_mass: f64 = nu.iter().sum();
    if !(nu_mass > 0.0) {
        return Err(Error::OracleFailure("left Perron vector vanishes".into()));
    }
    let nu = linalg::scale(&nu, 1.0 / nu_mass);
    let pairing = linalg::dot(&nu, &eta);
    if !(pairing > 0.0) {
        return Err(Error::OracleFailure("Perron vectors are orthogonal".into()));
    }
    let eta = linalg::scale(&eta, 1.0 / pairing);
    // The Rayleigh quotient is more accurate than the eigenvalue returned by the solver.
    let rho = linalg::dot(&nu, &m.mul_vec(&eta));
    Ok(PerronData { rho, eta, nu, second_modulus: second, method })
}

/// Constants of the geometric mixing estimate for the iterated kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingConstants {
    pub alpha: f64,
    /// Exact supremum over `|f| ≤ V` of the weighted residual, maximized over `k ≤ k_max`.
    pub c_q: f64,
    /// The same maximum restricted to the signed basis functions `±V(y)𝟙_y`.
    pub c_q_basis: f64,
    /// Step at which `c_q` is attained.
    pub argmax_k: usize,
    pub k_max: usize,
    /// Weighted residuals at or below this level are treated as zero.
    pub noise_floor: f64,
}

/// `sup_x Σ_y |θ₀^{-kt}Q_k(x,y) − η(x)ν(y)| V(y) / V(x)` and its basis-function analogue, for `k = 0..=k_max`.
pub fn mixing_residuals(q: &Matrix, perron: &PerronData, v: &[f64], k_max: usize) -> Vec<(f64, f64)> {
    let n = q.rows();
    let step = q.scaled(1.0 / perron.rho);
    let mut a = Matrix::identity(n);
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        if k > 0 {
            a = a.matmul(&step);
        }
        let mut exact: f64 = 0.0;
        let mut basis: f64 = 0.0;
        for x in 0..n {
            let mut row_sum = 0.0;
            let mut row_max: f64 = 0.0;
            for y in 0..n {
                let r = (a[(x, y)] - perron.eta[x] * perron.nu[y]).abs() * v[y];
                row_sum += r;
                row_max = row_max.max(r);
            }
            exact = exact.max(row_sum / v[x]);
            basis = basis.max(row_max / v[x]);
        }
        out.push((exact, basis));
    }
    out
}

/// Smallest `C_Q` such that the geometric estimate holds with rate `α` for every `k ≤ k_max`.
pub fn certify_mixing(q: &AbsorbedKernel, perron: &PerronData, v: &[f64], k_max: usize) -> Result<MixingConstants> {
    q.check_len(v.len())?;
    if v.iter().any(|&x| !(x >= 1.0) || !x.is_finite()) {
        return Err(Error::InvalidMeasure("V must be finite and at least 1".into()));
    }
    let alpha = perron.second_modulus / perron.rho;
    if alpha >= 1.0 - PERIPHERAL_TOLERANCE {
        return Err(Error::AlphaIsOne(alpha));
    }
    let eta_over_v = perron.eta.iter().zip(v).fold(0.0_f64, |m, (e, w)| m.max(e / w));
    let noise_floor = RESOLUTION * (1.0 + eta_over_v * linalg::dot(&perron.nu, v));
    let residuals = mixing_residuals(q.matrix(), perron, v, k_max);
    let mut c_q: f64 = 0.0;
    let mut c_q_basis: f64 = 0.0;
    let mut argmax_k = 0;
    for (k, &(exact, basis)) in residuals.iter().enumerate() {
        if exact <= noise_floor {
            continue;
        }
        let weight = alpha.powi(k as i32);
        if weight == 0.0 {
            return Err(Error::OracleFailure(format!(
                "residual {exact:e} at k = {k} does not vanish although the subdominant spectrum is zero"
            )));
        }
        if exact / weight > c_q {
            c_q = exact / weight;
            argmax_k = k;
        }
        c_q_basis = c_q_basis.max(basis / weight);
    }
    Ok(MixingConstants { alpha, c_q, c_q_basis, argmax_k, k_max, noise_floor })
}

/// Everything the rest of the library needs to know about the iterated kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCertificate {
    pub period: usize,
    pub theta0: f64,
    pub theta0_pow_t: f64,
    /// Right eigenvector on `A_0`.
    pub eta: Vec<f64>,
    /// Left eigenvector on `A_0`, a probability with `ν(η) = 1`.
    pub nu: Vec<f64>,
    /// The weight function `V ≥ 1` on `A_0`.
    pub v: Vec<f64>,
    pub alpha: f64,
    pub c_q: f64,
    pub c_q_basis: f64,
    pub c_q_prime: f64,
    pub k_max: usize,
    pub noise_floor: f64,
    pub method: PerronMethod,
    /// `max_x ‖Q_1η − θ₀ᵗη‖` relative to `‖η‖_∞`.
    pub right_residual: f64,
    /// `‖νQ_1 − θ₀ᵗν‖_1`.
    pub left_residual: f64,
    /// `min_x [(‖η/V‖_∞ν(V) + C_Qα)V(x) − Q_1V(x)]`; negative values mean the one-step bound is violated.
    pub one_step_slack: f64,
}

impl SpectralCertificate {
    /// `‖η/V‖_∞ ν(V) + C_Q α`.
    pub fn one_step_constant(&self) -> f64 {
        let eta_over_v = self.eta.iter().zip(&self.v).fold(0.0_f64, |m, (e, w)| m.max(e / w));
        eta_over_v * linalg::dot(&self.nu, &self.v) + self.c_q * self.alpha
    }
}

/// Runs [`compute_perron`] and [`certify_mixing`] on the iterated kernel of a chain of period `t`.
pub fn certify(q: &AbsorbedKernel, period: usize, v: Option<&[f64]>, options: &SpectralOptions) -> Result<SpectralCertificate> {
    let perron = compute_perron(q, options)?;
    let ones = vec![1.0; q.len()];
    let v = v.unwrap_or(&ones).to_vec();
    let mixing = certify_mixing(q, &perron, &v, options.k_max)?;
    let theta0 = perron.rho.powf(1.0 / period as f64);
    let m = q.matrix();
    let right_residual = linalg::sup_distance(&m.mul_vec(&perron.eta), &linalg::scale(&perron.eta, perron.rho))
        / linalg::sup_norm(&perron.eta);
    let left_residual = linalg::l1_distance(&m.vec_mul(&perron.nu), &linalg::scale(&perron.nu, perron.rho));
    let mut cert = SpectralCertificate {
        period,
        theta0,
        theta0_pow_t: perron.rho,
        eta: perron.eta,
        nu: perron.nu,
        v,
        alpha: mixing.alpha,
        c_q: mixing.c_q,
        c_q_basis: mixing.c_q_basis,
        c_q_prime: 0.0,
        k_max: mixing.k_max,
        noise_floor: mixing.noise_floor,
        method: perron.method,
        right_residual,
        left_residual,
        one_step_slack: 0.0,
    };
    let b = cert.one_step_constant();
    cert.c_q_prime = cert.c_q * theta0.powi(-2 * period as i32) * b * b;
    let qv = m.mul_vec(&cert.v);
    cert.one_step_slack = qv.iter().zip(&cert.v).fold(f64::INFINITY, |s, (q, w)| s.min(b * w - q));
    Ok(cert)
}

/// `P_1` with the cemetery adjoined as a last, absorbing state.
pub fn build_extended_kernel(kernel: &AbsorbedKernel) -> Matrix {
    let n = kernel.len();
    let m = kernel.matrix();
    Matrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => m[(i, j)],
        (true, false) => kernel.absorption()[i],
        (false, true) => 0.0,
        (false, false) => 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingEntry {
    /// Index `m` of the root of unity `ω = exp(2πim/t)`.
    pub root_index: usize,
    pub omega: [f64; 2],
    /// `θ₀ω`.
    pub target: [f64; 2],
    /// Distance from `θ₀ω` to the closest eigenvalue of `P_1` found by the dense solver.
    pub eigenvalue_error: f64,
    /// `‖P_1h_ω − θ₀ωh_ω‖_∞ / ‖h_ω‖_∞` for the explicit eigenfunction.
    pub eigenfunction_residual: f64,
    /// Distance, after optimal complex scaling, between `h_ω` and the solver's eigenvector, relative to `‖h_ω‖_∞`.
    pub oracle_alignment: f64,
    /// `νP_i h_ω` for `i = 0..t` (real and imaginary parts).
    pub nu_p_i_h: Vec<[f64; 2]>,
    /// `ωⁱθ₀ⁱ`, the closed form of the previous column.
    pub nu_p_i_h_expected: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub theta0: f64,
    pub alpha: f64,
    /// `θ₀α^{1/t}`.
    pub gap_radius: f64,
    /// Eigenvalues of `P_1` whose modulus is within the tolerance of `θ₀`.
    pub peripheral_count: usize,
    pub ring: Vec<RingEntry>,
    /// Largest modulus outside the ring according to the dense solver on `P_1`.
    ///
    /// Zero eigenvalues of `P_1` sit in Jordan chains of length up to `t`, so the
    /// dense solver only resolves them to about `ε^{1/t}`.
    pub bulk_max_dense: f64,
    /// Largest `|μ|^{1/t}` over the non-Perron eigenvalues `μ` of the diagonal blocks of `P_t`.
    pub bulk_max_structured: f64,
    /// Largest deviation of a diagonal block's Perron root from `θ₀ᵗ`.
    pub block_perron_error: f64,
    pub bulk_count: usize,
    /// Spectrum of the extended kernel, sorted by decreasing modulus.
    pub extended_spectrum: Vec<[f64; 2]>,
    /// Whether the chain is absorbed almost surely (`θ₀ < 1`).
    pub absorbed_surely: bool,
    /// Algebraic multiplicity of eigenvalue 1 of the extended kernel (numerically).
    pub unit_multiplicity: usize,
    /// Distance of the unit eigenvector of the extended kernel from the constants, when it is simple.
    pub unit_constant_error: Option<f64>,
    pub ring_ok: bool,
    pub eigenfunctions_ok: bool,
    pub bulk_ok: bool,
    pub dense_bulk_ok: bool,
    pub unit_ok: bool,
}

impl SpectrumReport {
    pub fn passed(&self) -> bool {
        self.ring_ok && self.eigenfunctions_ok && self.bulk_ok && self.unit_ok
    }
}

fn c(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// The explicit eigenfunction `h_ω = Σ_i ω^{-i}θ₀^{-i}P_iη` of `P_1`.
pub fn ring_eigenfunction(analysis: &ChainAnalysis, omega: Complex64) -> Vec<Complex64> {
    let t = analysis.period();
    let n = analysis.kernel().len();
    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..t {
        let eta_i = analysis.eta_k(i);
        let coef = omega.powi(-(i as i32));
        for (hx, e) in h.iter_mut().zip(&eta_i) {
            *hx += coef * e;
        }
    }
    h
}

fn complex_sup(v: &[Complex64]) -> f64 {
    v.iter().fold(0.0, |m, z| m.max(z.norm()))
}

fn alignment(h: &[Complex64], pair: &EigenPair) -> f64 {
    let num: Complex64 = pair.vector.iter().zip(h).map(|(v, h)| v.conj() * h).sum();
    let den: f64 = pair.vector.iter().map(|v| v.norm_sqr()).sum();
    let scale = num / den;
    let err = h.iter().zip(&pair.vector).fold(0.0_f64, |m, (h, v)| m.max((h - scale * v).norm()));
    err / complex_sup(h)
}

/// Partitions the spectrum of `P_1` and its extension into the unit eigenvalue,
/// the peripheral ring `θ₀·{ω : ωᵗ = 1}` and the bulk.
pub fn classify_spectrum(analysis: &ChainAnalysis) -> Result<SpectrumReport> {
    let cert = analysis.certificate();
    let t = analysis.period();
    let theta0 = cert.theta0;
    let p1 = analysis.kernel().matrix();
    let n = p1.rows();
    let pairs = eigen::eigen_decomposition(p1)?;

    let mut matched = vec![false; pairs.len()];
    let mut ring = Vec::with_capacity(t);
    let mut eigenfunctions_ok = true;
    let mut ring_ok = true;
    let nu_e = analysis.nu_e();
    for m in 0..t {
        let omega = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * m as f64 / t as f64);
        let target = omega * theta0;
        let (best, err) = pairs
            .iter()
            .enumerate()
            .filter(|(k, _)| !matched[*k])
            .map(|(k, p)| (k, (p.value - target).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::OracleFailure("fewer eigenvalues than the period".into()))?;
        matched[best] = true;
        let h = ring_eigenfunction(analysis, omega);
        let hn = complex_sup(&h);
        let ph: Vec<Complex64> = (0..n)
            .map(|x| (0..n).map(|y| h[y] * p1[(x, y)]).sum::<Complex64>())
            .collect();
        let residual = ph.iter().zip(&h).fold(0.0_f64, |r, (a, b)| r.max((a - target * b).norm())) / hn;
        let nu_p_i_h = (0..t)
            .map(|i| {
                let left = analysis.power(i).vec_mul(&nu_e);
                let members = analysis.cyclic().members(i);
                c(members.iter().map(|&x| h[x] * left[x]).sum())
            })
            .collect();
        let nu_p_i_h_expected = (0..t).map(|i| c(omega.powi(i as i32) * theta0.powi(i as i32))).collect();
        let align = alignment(&h, &pairs[best]);
        ring_ok &= err <= SPECTRUM_TOLERANCE;
        eigenfunctions_ok &= residual <= SPECTRUM_TOLERANCE && align <= SPECTRUM_TOLERANCE;
        ring.push(RingEntry {
            root_index: m,
            omega: c(omega),
            target: c(target),
            eigenvalue_error: err,
            eigenfunction_residual: residual,
            oracle_alignment: align,
            nu_p_i_h,
            nu_p_i_h_expected,
        });
    }
    let peripheral_count = pairs.iter().filter(|p| (p.value.norm() - theta0).abs() <= SPECTRUM_TOLERANCE).count();
    ring_ok &= peripheral_count == t;

    let gap_radius = theta0 * cert.alpha.powf(1.0 / t as f64);
    let bulk: Vec<f64> = pairs.iter().zip(&matched).filter(|(_, m)| !**m).map(|(p, _)| p.value.norm()).collect();
    let bulk_max_dense = bulk.iter().copied().fold(0.0, f64::max);
    let pt = analysis.power(t);
    let mut bulk_max_structured: f64 = 0.0;
    let mut block_perron_error: f64 = 0.0;
    for k in 0..t {
        let members = analysis.cyclic().members(k);
        let spectrum = eigen::eigenvalues(&pt.submatrix(&members, &members))?;
        block_perron_error = block_perron_error.max((spectrum[0] - cert.theta0_pow_t).norm());
        for mu in &spectrum[1..] {
            let modulus = mu.norm();
            if modulus > ZERO_EIGENVALUE_SNAP * cert.theta0_pow_t {
                bulk_max_structured = bulk_max_structured.max(modulus.powf(1.0 / t as f64));
            }
        }
    }
    let bulk_ok = bulk_max_structured <= gap_radius + SPECTRUM_TOLERANCE && block_perron_error <= SPECTRUM_TOLERANCE;
    let dense_bulk_ok = bulk_max_dense <= gap_radius + SPECTRUM_TOLERANCE;

    let extended = build_extended_kernel(analysis.kernel());
    let ext_pairs = eigen::eigen_decomposition(&extended)?;
    let one = Complex64::new(1.0, 0.0);
    let units: Vec<&EigenPair> = ext_pairs.iter().filter(|p| (p.value - one).norm() <= SPECTRUM_TOLERANCE).collect();
    let absorbed_surely = theta0 < 1.0 - SPECTRUM_TOLERANCE;
    let unit_constant_error = if units.len() == 1 {
        let ones = vec![one; n + 1];
        Some(alignment(&ones, units[0]))
    } else {
        None
    };
    let unit_ok = if absorbed_surely {
        units.len() == 1 && unit_constant_error.is_some_and(|e| e <= SPECTRUM_TOLERANCE)
    } else {
        true
    };
    Ok(SpectrumReport {
        theta0,
        alpha: cert.alpha,
        gap_radius,
        peripheral_count,
        ring,
        bulk_max_dense,
        bulk_max_structured,
        block_perron_error,
        bulk_count: bulk.len(),
        extended_spectrum: ext_pairs.iter().map(|p| c(p.value)).collect(),
        absorbed_surely,
        unit_multiplicity: units.len(),
        unit_constant_error,
        ring_ok,
        eigenfunctions_ok,
        bulk_ok,
        dense_bulk_ok,
        unit_ok,
    })
}

/// Membership in `B_V`: `|P_i(f𝟙_{A_i})| ≤ V` on `A_0` for every class index `i`.
pub fn bv_membership(analysis: &ChainAnalysis, f: &StateFunction) -> Result<bool> {
    analysis.kernel().check_len(f.len())?;
    let cyclic = analysis.cyclic();
    let a0 = cyclic.members(0);
    let v = &analysis.certificate().v;
    for i in 0..analysis.period() {
        let restricted = StateFunction::indicator(f.len(), &cyclic.members(i));
        let g = linalg::hadamard(f.values(), restricted.values());
        let pg = analysis.power(i).mul_vec(&g);
        for (k, &x) in a0.iter().enumerate() {
            if pg[x].abs() > v[k] * (1.0 + 1e-12) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
