//! Meta-learned surrogate models for sequential decision making.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffmath`]: dense f64 tensors, a tape-based reverse-mode autodiff
//!   engine, an Adam optimizer and diagonal-Gaussian primitives.
//! - [`neural_process`]: a latent-variable neural process — permutation
//!   invariant set encoding, latent conditioning, decoding, ELBO training
//!   and predictive sampling.
//! - [`baselines`]: exact Gaussian-process regression, random search and a
//!   pooled multitask MLP regressor.
//! - [`tasks`]: task distributions — sampled smooth 1-D functions,
//!   MovieLens-100k user rating tasks and cart-pole swing-up instances.
//! - [`decision`]: the decision loops — Thompson-sampling Bayesian
//!   optimisation, information-gain bandit selection, model-based control
//!   with a cross-entropy-method planner and two-level candidate search.
//!
//! Everything is deterministic given a seed; see [`rng`] for the seeding
//! scheme used to derive independent replicate streams.

pub mod baselines;
pub mod decision;
pub mod diffmath;
pub mod error;
pub mod neural_process;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
