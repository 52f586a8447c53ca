//! A validated chain bundled with its cyclic structure, spectral certificate
//! and the first few powers of the kernel.

use crate::chain::{AbsorbedKernel, CyclicStructure};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::periodicity;
use crate::spectral::{self, SpectralCertificate, SpectralOptions};

#[derive(Debug, Clone)]
pub struct ChainAnalysis {
    kernel: AbsorbedKernel,
    cyclic: CyclicStructure,
    iterated: AbsorbedKernel,
    certificate: SpectralCertificate,
    /// `P_0, …, P_{2t}`.
    powers: Vec<Matrix>,
    eta_e: Vec<f64>,
    nu_e: Vec<f64>,
    v_e: Vec<f64>,
}

impl ChainAnalysis {
    /// Detects the cyclic structure and certifies the iterated kernel with `V ≡ 1`.
    pub fn new(kernel: AbsorbedKernel) -> Result<Self> {
        let cyclic = periodicity::detect_cyclic_structure(&kernel)?;
        Self::with_structure(kernel, cyclic, None, &SpectralOptions::default())
    }

    /// `v` is the weight function on `A_0`, listed in increasing state order.
    pub fn with_structure(
        kernel: AbsorbedKernel,
        cyclic: CyclicStructure,
        v: Option<&[f64]>,
        options: &SpectralOptions,
    ) -> Result<Self> {
        let iterated = kernel.restrict_iterated(&cyclic)?;
        if let Some(v) = v {
            iterated.check_len(v.len())?;
        }
        let t = cyclic.period();
        let certificate = spectral::certify(&iterated, t, v, options)?;
        let mut powers = vec![Matrix::identity(kernel.len())];
        for i in 1..=2 * t {
            powers.push(powers[i - 1].matmul(kernel.matrix()));
        }
        let eta_e = cyclic.embed(0, &certificate.eta);
        let nu_e = cyclic.embed(0, &certificate.nu);
        let v_e = cyclic.embed(0, &certificate.v);
        Ok(ChainAnalysis { kernel, cyclic, iterated, certificate, powers, eta_e, nu_e, v_e })
    }

    pub fn kernel(&self) -> &AbsorbedKernel {
        &self.kernel
    }

    pub fn cyclic(&self) -> &CyclicStructure {
        &self.cyclic
    }

    pub fn iterated(&self) -> &AbsorbedKernel {
        &self.iterated
    }

    pub fn certificate(&self) -> &SpectralCertificate {
        &self.certificate
    }

    pub fn period(&self) -> usize {
        self.cyclic.period()
    }

    pub fn theta0(&self) -> f64 {
        self.certificate.theta0
    }

    pub fn len(&self) -> usize {
        self.kernel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernel.is_empty()
    }

    /// `P_i` for `i ≤ 2t`; larger exponents panic.
    pub fn power(&self, i: usize) -> &Matrix {
        &self.powers[i]
    }

    /// `η` extended by 0 off `A_0`.
    pub fn eta_e(&self) -> &[f64] {
        &self.eta_e
    }

    /// `ν` extended by 0 off `A_0`.
    pub fn nu_e(&self) -> &[f64] {
        &self.nu_e
    }

    /// `V` extended by 0 off `A_0`.
    pub fn v_e(&self) -> &[f64] {
        &self.v_e
    }

    /// `θ₀^{-k} P_k η` for `k ≤ 2t`.
    pub fn eta_k(&self, k: usize) -> Vec<f64> {
        linalg::scale(&self.powers[k].mul_vec(&self.eta_e), self.theta0().powi(-(k as i32)))
    }

    /// `νP_i` as a weight vector on `E`, for `i ≤ 2t`.
    pub fn nu_p(&self, i: usize) -> Vec<f64> {
        self.powers[i].vec_mul(&self.nu_e)
    }

    /// `Σ_i μ|_{A_i} P_{t-i} g` for a function `g` on `E`.
    pub fn class_pairing(&self, mu: &[f64], g: &[f64]) -> Result<f64> {
        self.kernel.check_len(mu.len())?;
        let t = self.period();
        let mut total = 0.0;
        for i in 0..t {
            let pg = self.powers[t - i].mul_vec(g);
            total += self.cyclic.members(i).iter().map(|&x| mu[x] * pg[x]).sum::<f64>();
        }
        Ok(total)
    }

    /// The per-class weights `μ|_{A_i} P_{t-i} η`.
    pub fn eta_weights(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.kernel.check_len(mu.len())?;
        let t = self.period();
        Ok((0..t)
            .map(|i| {
                let pe = self.powers[t - i].mul_vec(&self.eta_e);
                self.cyclic.members(i).iter().map(|&x| mu[x] * pe[x]).sum()
            })
            .collect())
    }

    /// Same as [`Self::eta_weights`] but fails when every weight vanishes.
    pub fn visible_eta_weights(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let w = self.eta_weights(mu)?;
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::EtaOrthogonal);
        }
        Ok(w)
    }
}
