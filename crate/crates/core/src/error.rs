use std::io;

use thiserror::Error;

/// Errors surfaced by the simulator, the policy network and the trainer.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its contract (acting on a terminal
    /// state, empty inputs, out-of-range indices).
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value reached the optimizer or an accumulation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A file could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint was written for a different network layout.
    #[error("layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch { expected: String, found: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn usage_err(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
