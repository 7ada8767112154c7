//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV row failed to parse; carries the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    /// Structural violation in the input data (spacing, ordering, ranges).
    #[error("schema error: {0}")]
    Schema(String),

    /// Stations with missing intervals or mismatched extents.
    #[error("gap report: {0}")]
    Gap(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor/vector shape disagreement.
    #[error("shape error: {0}")]
    Shape(String),

    /// Checkpoint could not be read back.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Runs cannot be compared (mismatched setups).
    #[error("comparison error: {0}")]
    Comparison(String),

    /// A numeric invariant failed at runtime (non-finite values and the like).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
