//! Diagonal Gaussian distributions.
//!
//! The universal predictive and latent distribution object: a mean vector
//! and a strictly positive stddev vector of equal length.

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// A diagonal Gaussian over `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    stddev: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.len() != stddev.len() {
            return Err(Error::dimension("DiagGaussian::new", mean.len(), stddev.len()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("DiagGaussian::new", "non-finite mean entry"));
        }
        if stddev.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(
                "DiagGaussian::new",
                "stddev entries must be finite and strictly positive",
            ));
        }
        Ok(DiagGaussian { mean, stddev })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            stddev: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn stddev(&self) -> &[f64] {
        &self.stddev
    }

    /// Log density of `y`: `Σ_j [-½ln(2π) - ln σ_j - (y_j-μ_j)²/(2σ_j²)]`.
    pub fn log_prob(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::dimension("DiagGaussian::log_prob", self.dim(), y.len()));
        }
        let mut lp = 0.0;
        for ((m, s), v) in self.mean.iter().zip(&self.stddev).zip(y) {
            let d = v - m;
            lp += -0.5 * LN_2PI - s.ln() - d * d / (2.0 * s * s);
        }
        Ok(lp)
    }

    /// Closed-form `KL(self ‖ other)` between diagonal Gaussians.
    pub fn kl(&self, other: &DiagGaussian) -> Result<f64> {
        if other.dim() != self.dim() {
            return Err(Error::dimension("DiagGaussian::kl", self.dim(), other.dim()));
        }
        let mut kl = 0.0;
        for i in 0..self.dim() {
            let (mq, sq) = (self.mean[i], self.stddev[i]);
            let (mp, sp) = (other.mean[i], other.stddev[i]);
            let dm = mq - mp;
            kl += (sp / sq).ln() + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
        }
        Ok(kl)
    }

    /// Differential entropy `Σ_j ½ln(2πe σ_j²)`.
    pub fn entropy(&self) -> f64 {
        self.stddev
            .iter()
            .map(|s| 0.5 * (LN_2PI + 1.0) + s.ln())
            .sum()
    }

    /// Reparameterized sample `μ + σ ⊙ noise`.
    pub fn reparam_sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.dim() {
            return Err(Error::dimension(
                "DiagGaussian::reparam_sample",
                self.dim(),
                noise.len(),
            ));
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.stddev)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect())
    }

    /// Draw a sample using fresh standard-normal noise from `rng`.
    pub fn sample(&self, rng: &mut crate::rng::Rng) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let noise: Vec<f64> = (0..self.dim())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        // noise has the right length by construction
        self.reparam_sample(&noise).expect("matching dims")
    }
}
