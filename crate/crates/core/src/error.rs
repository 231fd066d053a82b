//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An opening math delimiter with no matching closer.
    #[error("unterminated {delimiter} starting at byte {offset} in document '{doc_id}'")]
    UnterminatedMath {
        doc_id: String,
        delimiter: &'static str,
        offset: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    /// Transport-level client failure after the retry budget is spent.
    #[error("client transport failure after {attempts} attempt(s): {message}")]
    ClientTransport { attempts: u32, message: String },

    /// A pair could not be distilled (compression retries exhausted, etc.).
    #[error("distillation failed for pair '{pair_id}': {message}")]
    PairFailed { pair_id: String, message: String },

    #[error("wrote {written} of {total} records before I/O failure")]
    PartialWrite {
        written: usize,
        total: usize,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    #[error("operation failed: {0}")]
    Operational(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
