//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset handling, configuration checks and the solver.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its allowed range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Matrix, mask or label dimensions disagree with what was expected.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input data violates a documented requirement (zero-norm present
    /// column, NaN in a present entry, empty chunk, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A text or binary dataset file could not be decoded.
    #[error("parse error in {path} (line {line}): {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A chunk stream ended before yielding the declared number of
    /// instances.
    #[error("chunk stream truncated: got {got} of {expected} declared instances")]
    StreamTruncated { expected: usize, got: usize },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
