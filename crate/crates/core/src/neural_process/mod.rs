//! Latent-variable neural process.
//!
//! A set encoder `h` maps each context pair `(x, y)` to a representation;
//! the mean over the set (plus a `log(1+n)` count feature) parameterises a
//! diagonal-Gaussian latent `z`; a decoder maps `(x, z)` to a predictive
//! Gaussian per target. Training maximises a single-sample evidence lower
//! bound with a closed-form KL between the target- and context-conditioned
//! latent posteriors.
//!
//! Conditioning is pure: predictions never mutate trained parameters, and
//! one prediction pass touches each context and each target point exactly
//! once (the pass counters expose this for verification).

mod model;
mod train;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::diffmath::Activation;
use crate::error::{Error, Result};

pub use model::{moment_match, NeuralProcess};
pub use train::{elbo_loss_mc_kl, meta_train, TrainOptions};

/// Floor added to the softplus-parameterised latent stddev so the latent
/// posterior stays strictly positive in floating point.
pub const LATENT_SIGMA_FLOOR: f64 = 1e-3;

/// How context representations are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    /// Arithmetic mean; the set size enters through the count feature.
    #[default]
    Mean,
}

/// Optional learned embedding table substituted for an integer id carried in
/// the final input slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub vocab_size: usize,
    pub dim: usize,
}

/// Architecture and clamping hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpConfig {
    /// Public input width; with an embedding configured the final slot is an
    /// integer id into the table.
    pub input_dim: usize,
    pub output_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub repr_dim: usize,
    pub latent_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub min_sigma: f64,
    pub max_sigma: Option<f64>,
    pub max_context_size: usize,
    pub aggregator: Aggregator,
    pub activation: Activation,
    pub embedding: Option<EmbeddingSpec>,
    /// Standardize dense inputs and outputs per dimension before the
    /// networks see them; predictions are mapped back to raw units. The
    /// constants live in the parameter set under `norm.*` (they receive no
    /// gradient) so checkpoints stay self-contained.
    pub normalize: bool,
}

impl NpConfig {
    /// A reasonable starting point for `d_x -> d_y` regression; callers
    /// override fields as needed.
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        NpConfig {
            input_dim,
            output_dim,
            encoder_hidden: vec![128, 128],
            repr_dim: 128,
            latent_hidden: vec![],
            latent_dim: 64,
            decoder_hidden: vec![128, 128],
            min_sigma: 0.1,
            max_sigma: None,
            max_context_size: 300,
            aggregator: Aggregator::Mean,
            activation: Activation::Relu,
            embedding: None,
            normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.repr_dim == 0 || self.latent_dim == 0
        {
            return Err(Error::invalid("NpConfig", "dimensions must be positive"));
        }
        if !(self.min_sigma > 0.0) {
            return Err(Error::invalid("NpConfig", "min_sigma must be > 0"));
        }
        if let Some(mx) = self.max_sigma {
            if mx <= self.min_sigma {
                return Err(Error::invalid("NpConfig", "max_sigma must exceed min_sigma"));
            }
        }
        if self.max_context_size == 0 {
            return Err(Error::invalid("NpConfig", "max_context_size must be positive"));
        }
        if let Some(e) = self.embedding {
            if e.vocab_size == 0 || e.dim == 0 {
                return Err(Error::invalid("NpConfig", "embedding dims must be positive"));
            }
            if self.input_dim < 2 {
                return Err(Error::invalid(
                    "NpConfig",
                    "embedding requires at least one dense input slot",
                ));
            }
            if self.normalize {
                return Err(Error::invalid(
                    "NpConfig",
                    "normalization is not supported together with an embedding",
                ));
            }
        }
        Ok(())
    }

    /// Width of the dense x-part fed to the networks (embedding substituted).
    pub fn dense_input_dim(&self) -> usize {
        match self.embedding {
            Some(e) => self.input_dim - 1 + e.dim,
            None => self.input_dim,
        }
    }

    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.dense_input_dim() + self.output_dim];
        s.extend(&self.encoder_hidden);
        s.push(self.repr_dim);
        s
    }

    pub fn latent_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.repr_dim + 1];
        s.extend(&self.latent_hidden);
        s.push(self.latent_dim);
        s
    }

    pub fn decoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.dense_input_dim() + self.latent_dim];
        s.extend(&self.decoder_hidden);
        s.push(2 * self.output_dim);
        s
    }
}

/// A set of `(x, y)` pairs used as context or (observed) targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointSet {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

impl PointSet {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::dimension("PointSet::new", xs.len(), ys.len()));
        }
        Ok(PointSet { xs, ys })
    }

    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Self {
        PointSet {
            xs: pairs.iter().map(|(x, _)| x.clone()).collect(),
            ys: pairs.iter().map(|(_, y)| y.clone()).collect(),
        }
    }

    pub fn empty() -> Self {
        PointSet::default()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: Vec<f64>) {
        self.xs.push(x);
        self.ys.push(y);
    }

    fn check_dims(&self, dx: usize, dy: usize, context: &str) -> Result<()> {
        for x in &self.xs {
            if x.len() != dx {
                return Err(Error::dimension(format!("{context} x"), dx, x.len()));
            }
        }
        for y in &self.ys {
            if y.len() != dy {
                return Err(Error::dimension(format!("{context} y"), dy, y.len()));
            }
        }
        Ok(())
    }
}

/// Where a predictive distribution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Decoded under one latent draw.
    SingleZDraw,
    /// Mixture over latent draws collapsed to one Gaussian per target.
    MomentMatched,
}

/// Per-target predictive Gaussians.
#[derive(Debug, Clone)]
pub struct Predictive {
    pub dists: Vec<crate::diffmath::DiagGaussian>,
    pub provenance: Provenance,
}

impl Predictive {
    pub fn means(&self) -> Vec<Vec<f64>> {
        self.dists.iter().map(|d| d.mean().to_vec()).collect()
    }
}

/// Counts of per-point encoder/decoder evaluations, for complexity checks.
#[derive(Debug, Default)]
pub struct PassCounters {
    encoder: AtomicUsize,
    decoder: AtomicUsize,
}

impl PassCounters {
    pub fn add_encoder(&self, n: usize) {
        self.encoder.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_decoder(&self, n: usize) {
        self.decoder.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> (usize, usize) {
        (
            self.encoder.load(Ordering::Relaxed),
            self.decoder.load(Ordering::Relaxed),
        )
    }

    pub fn reset(&self) {
        self.encoder.store(0, Ordering::Relaxed);
        self.decoder.store(0, Ordering::Relaxed);
    }
}
