//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong between a config file and a posterior
/// sample.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration value (precondition failure).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor/network shape mismatch.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Training produced a non-finite loss; reports where.
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    /// A simulator or quantile evaluation returned a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Rejection sampling exhausted its budget without a single accept.
    /// Carries the smallest summary distance seen, to guide ε.
    #[error("no accepted draws within budget; minimum observed summary distance {min_distance}")]
    NoAcceptedDraws { min_distance: f64 },

    /// File contents did not parse as the expected format.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV layer failure (wraps line diagnostics where available).
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for `Error::InvalidArgument` with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
