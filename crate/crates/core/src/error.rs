use thiserror::Error;

/// Errors produced by the solvers and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time lag must be positive, got {0}")]
    NonPositiveLag(f64),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("non-finite value encountered at time index {time_index}, node {node}")]
    NonFinite { time_index: usize, node: usize },

    #[error("Picard iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("base path leaves the truncation ball (norm {norm} >= {level} at time index {time_index})")]
    Localization { level: f64, norm: f64, time_index: usize },

    #[error("comparison hypothesis violated: u0 > v0 at node {node} ({u0} > {v0})")]
    OrderingHypothesis { node: usize, u0: f64, v0: f64 },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed binary file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
