//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DvtError {
    /// Invalid configuration value (bad block size, temperature <= 0, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data (dataset line, CoNLL-U field, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint missing, unreadable, or incompatible with the config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Operation applied to inputs it cannot evaluate (empty corpus, all-pad
    /// sequence, zero model mass where the reference has support, ...).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DvtError>;
