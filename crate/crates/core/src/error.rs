use thiserror::Error;

/// Errors produced by estimation, inference, and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input: dimensions, ranges, shape mismatches, or degenerate
    /// (zero-trace) data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Numeric failure: non-positive-definite matrix or a non-converging
    /// iteration.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A requested allocation exceeds the configured dense-size cap.
    #[error("resource limit: {0}")]
    Resource(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
