use thiserror::Error;

/// Errors produced by solvers and constructors throughout the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid caller input: shape mismatches, non-normalized weights,
    /// out-of-range parameters.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A solver gave up: pivot limit exceeded, numerical underflow, etc.
    /// Never returned silently with a bogus solution.
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// Filesystem / serialization problems surfaced by the CLI layer.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
