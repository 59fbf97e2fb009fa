//! Dense f64 tensor arithmetic with reverse-mode differentiation, an
//! adaptive-moment optimizer and diagonal-Gaussian probability primitives.
//!
//! The op set is deliberately small: matrix products, elementwise maps,
//! reductions, concatenation/slicing, embedding-row selection and fused
//! Gaussian log-prob / KL / entropy terms. The tape builder API is closed,
//! so a graph can only ever contain supported primitives.

pub mod adam;
pub mod gaussian;
pub mod linalg;
pub mod mlp;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, OptState};
pub use gaussian::DiagGaussian;
pub use mlp::{mlp_apply, mlp_apply_batch, mlp_init, Activation};
pub use params::ParamSet;
pub use tape::{gradient, Tape, Var};
pub use tensor::Tensor;
