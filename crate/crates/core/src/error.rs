use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the bound pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The system does not satisfy the contraction condition; carries the offending value.
    #[error("system is not class-S certified: {what} = {value} (must be < 1)")]
    NotClassS { what: &'static str, value: f64 },

    #[error("linear dynamics are unstable: {0}")]
    Instability(String),

    #[error("singular composition: max(tau1, tau2) = 0 makes ln(tau) undefined")]
    SingularComposition,

    #[error("degenerate truncation: bound/std = {ratio:e} is below 1e-6")]
    DegenerateTruncation { ratio: f64 },

    #[error("invalid chain start: log-density at the initial point is not finite")]
    InvalidStart,

    #[error("invalid confidence level delta = {0} (must lie in (0, 0.5])")]
    InvalidConfidence(f64),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
