//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, training and decision loops.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or layer was fed data of the wrong width.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A value or parameter is invalid (non-finite, out of range, empty).
    #[error("invalid value in {context}: {message}")]
    Invalid { context: String, message: String },

    /// Numerical failure (non-finite gradients, Cholesky breakdown).
    #[error("numeric failure in {context}: {message}")]
    Numeric { context: String, message: String },

    /// The differentiation tape was asked for something outside its op set.
    #[error("unsupported operation: {0}")]
    UnsupportedOp(String),

    /// A finite candidate or task pool ran out.
    #[error("exhausted: {0}")]
    Exhausted(String),

    /// A task cannot be evaluated (empty target set, empty holdout).
    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    /// Scaling range with f_max <= f_min.
    #[error("degenerate range: f_max ({f_max}) must exceed f_min ({f_min})")]
    DegenerateRange { f_min: f64, f_max: f64 },

    /// Malformed dataset file.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dimension(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn invalid(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
