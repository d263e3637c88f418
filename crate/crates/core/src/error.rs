use thiserror::Error;

/// Errors produced by tensors, tapes, models, data handling and training.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation received tensors whose shapes do not fit its contract.
    #[error("{op}: shape mismatch (expected {expected}, got {actual})")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    /// An operation produced a NaN or infinite value.
    #[error("{op}: numeric overflow (non-finite value produced)")]
    NonFinite { op: &'static str },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is outside its allowed range.
    #[error("config error: {0}")]
    Config(String),

    /// A dataset or split request cannot be satisfied.
    #[error("data error: {0}")]
    Data(String),

    /// An external file could not be parsed.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Training diverged (non-finite or runaway loss).
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    /// The requested mode needs a capability that was not retained.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
