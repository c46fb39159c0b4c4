use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed for {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("capacity exceeded: {what} is {got}, limit is {limit}")]
    Capacity {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("coupling graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("closed loop is not Hurwitz (spectral abscissa {abscissa:e})")]
    Unstable { abscissa: f64 },

    #[error("no stabilizing solution of the Riccati equation: {0}")]
    NotStabilizable(String),

    #[error("no stabilizing gain conforms to sparsity pattern {pattern}")]
    PatternNotStabilizable { pattern: String },

    #[error("equilibrium solver did not converge (best epsilon {best_epsilon:e}, tolerance {tolerance:e})")]
    NonConvergence { best_epsilon: f64, tolerance: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
