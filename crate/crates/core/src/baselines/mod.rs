//! Reference surrogates the neural process is benchmarked against: exact
//! Gaussian-process regression, uniform random search and a pooled
//! multitask MLP regressor.

pub mod gp;
pub mod multitask_mlp;
pub mod random_search;

pub use gp::{gp_fit, gp_sample, kernel_eval, GpHyper, GpPosterior, KernelFn};
pub use multitask_mlp::{multitask_mlp_fit, MultitaskMlp, MultitaskMlpConfig};
pub use random_search::random_search_step;
