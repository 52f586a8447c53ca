//! Quasi-stationary distributions of a periodic chain and of its iterated kernel.

use serde::Serialize;

use crate::chain::{AbsorbedKernel, CyclicStructure, DiscreteMeasure};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Default L1 tolerance of [`is_qsd`].
pub const QSD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QsdCheck {
    pub is_qsd: bool,
    /// One-step survival probability `μP_1𝟙_E`.
    pub theta: f64,
    /// `‖μP_1 − θμ‖_1`.
    pub residual: f64,
}

/// Checks the fixed-point identity `μP_1 = θμ` of a quasi-stationary distribution.
pub fn is_qsd(kernel: &AbsorbedKernel, mu: &DiscreteMeasure, tol: f64) -> Result<QsdCheck> {
    kernel.check_len(mu.len())?;
    let mass = mu.mass();
    if (mass - 1.0).abs() > QSD_TOLERANCE {
        return Err(Error::InvalidMeasure(format!("total mass {mass} is not 1")));
    }
    let image = kernel.matrix().vec_mul(mu.weights());
    let theta: f64 = image.iter().sum();
    if theta <= 0.0 {
        return Err(Error::ThetaZero);
    }
    let residual = linalg::l1_distance(&image, &linalg::scale(mu.weights(), theta));
    Ok(QsdCheck { is_qsd: residual <= tol, theta, residual })
}

fn powers(kernel: &AbsorbedKernel, count: usize) -> Vec<Matrix> {
    let mut out = vec![Matrix::identity(kernel.len())];
    for i in 1..count {
        out.push(out[i - 1].matmul(kernel.matrix()));
    }
    out
}

/// Validates `ν` as a QSD of the iterated kernel and returns `(θ₀, νP_i for i < t)`.
fn iterated_orbit(kernel: &AbsorbedKernel, cyclic: &CyclicStructure, nu: &DiscreteMeasure) -> Result<(f64, Vec<Vec<f64>>)> {
    let q = kernel.restrict_iterated(cyclic)?;
    let check = is_qsd(&q, nu, QSD_TOLERANCE)?;
    if !check.is_qsd {
        return Err(Error::NotAQsd { residual: check.residual });
    }
    let t = cyclic.period();
    let theta0 = check.theta.powf(1.0 / t as f64);
    let nu_e = cyclic.embed(0, nu.weights());
    let orbit = powers(kernel, t).iter().map(|p| p.vec_mul(&nu_e)).collect();
    Ok((theta0, orbit))
}

/// The QSD of `P_1` whose restriction to `A_0` is the QSD `ν` of the iterated kernel.
pub fn qsd_from_iterated(kernel: &AbsorbedKernel, cyclic: &CyclicStructure, nu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let (theta0, orbit) = iterated_orbit(kernel, cyclic, nu)?;
    let mut sum = vec![0.0; kernel.len()];
    for (i, nu_p) in orbit.iter().enumerate() {
        linalg::axpy(&mut sum, theta0.powi(-(i as i32)), nu_p);
    }
    DiscreteMeasure::from_trusted(sum).normalized()
}

/// Normalized restriction of a QSD of `P_1` to `A_0`.
pub fn iterated_from_qsd(nu_qs: &DiscreteMeasure, cyclic: &CyclicStructure) -> Result<DiscreteMeasure> {
    if nu_qs.len() != cyclic.len() {
        return Err(Error::DimensionMismatch { expected: cyclic.len(), found: nu_qs.len() });
    }
    let restricted = cyclic.restrict(0, nu_qs.weights());
    let mass: f64 = restricted.iter().sum();
    if mass <= 0.0 {
        return Err(Error::ZeroMassOnA0);
    }
    Ok(DiscreteMeasure::from_trusted(linalg::scale(&restricted, 1.0 / mass)))
}

/// Weights `w_i ∝ θ₀^{-i} νP_i𝟙_E` under which the family of [`iterated_qsd_family`]
/// reproduces [`qsd_from_iterated`].
pub fn periodic_profile_weights(kernel: &AbsorbedKernel, cyclic: &CyclicStructure, nu: &DiscreteMeasure) -> Result<Vec<f64>> {
    let (theta0, orbit) = iterated_orbit(kernel, cyclic, nu)?;
    let raw: Vec<f64> = orbit
        .iter()
        .enumerate()
        .map(|(i, nu_p)| theta0.powi(-(i as i32)) * nu_p.iter().sum::<f64>())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(linalg::scale(&raw, 1.0 / total))
}

/// Convex combination `Σ_i w_i νP_i / νP_i𝟙_E`; every member is a QSD of `P_t`.
pub fn iterated_qsd_family(
    kernel: &AbsorbedKernel,
    cyclic: &CyclicStructure,
    nu: &DiscreteMeasure,
    weights: &[f64],
) -> Result<DiscreteMeasure> {
    let t = cyclic.period();
    if weights.len() != t {
        return Err(Error::DimensionMismatch { expected: t, found: weights.len() });
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::DegenerateWeight("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::DegenerateWeight(format!("weights sum to {total}, not 1")));
    }
    let (_, orbit) = iterated_orbit(kernel, cyclic, nu)?;
    let mut sum = vec![0.0; kernel.len()];
    for (i, nu_p) in orbit.iter().enumerate() {
        let mass: f64 = nu_p.iter().sum();
        if mass <= 0.0 {
            return Err(Error::DegenerateWeight(format!("νP_{i} has zero mass")));
        }
        linalg::axpy(&mut sum, weights[i] / mass, nu_p);
    }
    Ok(DiscreteMeasure::from_trusted(sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;
    use crate::periodicity::detect_cyclic_structure;

    #[test]
    fn two_cycle_qsd() {
        let k = instances::two_cycle(0.8, 0.5);
        let r = 1.6_f64.sqrt();
        let mu = DiscreteMeasure::probability(vec![1.0 / (1.0 + r), r / (1.0 + r)]).unwrap();
        let check = is_qsd(&k, &mu, QSD_TOLERANCE).unwrap();
        assert!(check.is_qsd);
        assert!((check.theta - 0.4_f64.sqrt()).abs() < 1e-14);
        assert!(!is_qsd(&k, &DiscreteMeasure::dirac(2, 0), QSD_TOLERANCE).unwrap().is_qsd);

        let c = detect_cyclic_structure(&k).unwrap();
        let qs = qsd_from_iterated(&k, &c, &DiscreteMeasure::dirac(1, 0)).unwrap();
        assert!((qs.weights()[1] - r / (1.0 + r)).abs() < 1e-14);
        assert_eq!(iterated_from_qsd(&qs, &c).unwrap().weights(), &[1.0]);
    }

    #[test]
    fn symmetric_and_aperiodic_cases() {
        let k = instances::two_cycle(0.6, 0.6);
        let c = detect_cyclic_structure(&k).unwrap();
        let qs = qsd_from_iterated(&k, &c, &DiscreteMeasure::dirac(1, 0)).unwrap();
        assert!((qs.weights()[0] - 0.5).abs() < 1e-15);
        let cycle = instances::pure_cycle(3);
        let check = is_qsd(&cycle, &DiscreteMeasure::uniform(3), QSD_TOLERANCE).unwrap();
        assert!(check.is_qsd && (check.theta - 1.0).abs() < 1e-15);
        let dead = AbsorbedKernel::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec!["a", "b"]).unwrap();
        assert_eq!(is_qsd(&dead, &DiscreteMeasure::dirac(2, 0), 1e-9), Err(Error::ThetaZero));
    }

    #[test]
    fn family_members() {
        let k = instances::two_cycle(0.8, 0.5);
        let c = detect_cyclic_structure(&k).unwrap();
        let nu = DiscreteMeasure::dirac(1, 0);
        let p2 = k.power(2);
        let first = iterated_qsd_family(&k, &c, &nu, &[1.0, 0.0]).unwrap();
        assert_eq!(first.weights(), &[1.0, 0.0]);
        assert!(is_qsd(&p2, &first, QSD_TOLERANCE).unwrap().is_qsd);
        assert!(!is_qsd(&k, &first, QSD_TOLERANCE).unwrap().is_qsd);

        let w = periodic_profile_weights(&k, &c, &nu).unwrap();
        let theta0 = 0.4_f64.sqrt();
        assert!((w[1] / w[0] - 0.8 / theta0).abs() < 1e-13);
        let matched = iterated_qsd_family(&k, &c, &nu, &w).unwrap();
        let qs = qsd_from_iterated(&k, &c, &nu).unwrap();
        assert!(matched.l1_distance(&qs) < 1e-14);

        let half = iterated_qsd_family(&k, &c, &nu, &[0.5, 0.5]).unwrap();
        assert!(is_qsd(&p2, &half, QSD_TOLERANCE).unwrap().is_qsd);
        assert!(!is_qsd(&k, &half, QSD_TOLERANCE).unwrap().is_qsd);
        assert!(matches!(iterated_qsd_family(&k, &c, &nu, &[0.7, 0.7]), Err(Error::DegenerateWeight(_))));
    }

    #[test]
    fn non_qsd_input_is_rejected() {
        let k = AbsorbedKernel::new(vec![vec![0.0, 0.5, 0.4], vec![0.3, 0.0, 0.0], vec![0.9, 0.0, 0.0]], vec!["a", "b", "c"]).unwrap();
        let c = detect_cyclic_structure(&k).unwrap();
        assert_eq!(c.period(), 2);
        let err = qsd_from_iterated(&k, &c, &DiscreteMeasure::dirac(1, 0));
        assert!(err.is_ok(), "a singleton class is always quasi-stationary");
        let c2 = CyclicStructure::new(2, vec![1, 0, 0]).unwrap();
        assert!(matches!(
            qsd_from_iterated(&k, &c2, &DiscreteMeasure::dirac(2, 0)),
            Err(Error::NotAQsd { .. })
        ));
    }
}
