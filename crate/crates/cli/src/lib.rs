//! Experiment runner library behind the `metasurrogate` binary:
//! configuration loading, checkpoint persistence, pipeline execution and
//! report generation.

pub mod checkpoint;
pub mod config;
pub mod pipelines;
pub mod report;

use thiserror::Error;

/// Errors surfaced by the runner, carrying the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Configuration problems: unparseable TOML, unknown keys, invalid or
    /// inconsistent fields, checkpoint/config mismatches. Exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// Missing or malformed data files. Exit code 3.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure inside a pipeline. Exit code 4.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Anything else. Exit code 1.
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<metasurrogate_core::Error> for CliError {
    fn from(e: metasurrogate_core::Error) -> Self {
        use metasurrogate_core::Error as E;
        match &e {
            E::Numeric { .. } => CliError::Numeric(e.to_string()),
            E::Io { .. } | E::Parse { .. } => CliError::Data(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
