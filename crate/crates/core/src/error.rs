//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("model and dataset are incompatible: {0}")]
    Incompatible(String),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("singular matrix in {context} (damping lambda = {lambda:e}); use a nonzero damping")]
    Singular { context: &'static str, lambda: f64 },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("gradient is zero: {0}")]
    ZeroGradient(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// `true` for errors caused by bad user input (flags, config files,
    /// malformed data files) as opposed to numerical failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::InvalidData(_)
                | Error::Incompatible(_)
                | Error::DimensionMismatch { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
