//! Dense eigensolver oracle backed by `faer`.

use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: Complex64,
    /// Right eigenvector, normalized to unit Euclidean norm.
    pub vector: Vec<Complex64>,
}

fn to_faer(m: &Matrix) -> Mat<f64> {
    Mat::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

fn by_modulus_desc(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.norm().total_cmp(&a.norm()).then(b.re.total_cmp(&a.re)).then(b.im.total_cmp(&a.im))
}

/// All eigenvalues, sorted by decreasing modulus.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex64>> {
    assert!(m.is_square());
    if m.rows() == 0 {
        return Ok(Vec::new());
    }
    let mut vals: Vec<Complex64> = to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::OracleFailure(format!("{e:?}")))?
        .into_iter()
        .collect();
    if vals.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::OracleFailure("non-finite eigenvalue".into()));
    }
    vals.sort_by(by_modulus_desc);
    Ok(vals)
}

/// Full right eigendecomposition, sorted by decreasing eigenvalue modulus.
pub fn eigen_decomposition(m: &Matrix) -> Result<Vec<EigenPair>> {
    assert!(m.is_square());
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let evd = to_faer(m).eigen().map_err(|e| Error::OracleFailure(format!("{e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let value: Complex64 = s[k];
        let mut vector: Vec<Complex64> = (0..n).map(|i| u[(i, k)]).collect();
        let norm = vector.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !value.re.is_finite() || !value.im.is_finite() || !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::OracleFailure(format!("degenerate eigenpair {k}")));
        }
        for z in &mut vector {
            *z /= norm;
        }
        pairs.push(EigenPair { value, vector });
    }
    pairs.sort_by(|a, b| by_modulus_desc(&a.value, &b.value));
    Ok(pairs)
}

/// Real nonnegative representative of an eigenvector known to be of one sign.
pub fn positive_part(vector: &[Complex64]) -> Vec<f64> {
    let pivot = vector.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or_default();
    let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { Complex64::new(1.0, 0.0) };
    vector.iter().map(|z| (z * phase).re.max(0.0)).collect()
}

/// Stationary law of an irreducible stochastic matrix, from the left eigenvector
/// whose eigenvalue is closest to 1.
pub fn stationary_distribution(m: &Matrix) -> Result<Vec<f64>> {
    let pairs = eigen_decomposition(&m.transpose())?;
    let one = Complex64::new(1.0, 0.0);
    let best = pairs
        .iter()
        .min_by(|a, b| (a.value - one).norm().total_cmp(&(b.value - one).norm()))
        .ok_or_else(|| Error::OracleFailure("empty matrix".into()))?;
    if (best.value - one).norm() > 1e-8 {
        return Err(Error::OracleFailure(format!("no eigenvalue near 1 (closest {})", best.value)));
    }
    let pi = positive_part(&best.vector);
    let mass: f64 = pi.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::OracleFailure("stationary vector has zero mass".into()));
    }
    Ok(pi.into_iter().map(|p| p / mass).collect())
}
