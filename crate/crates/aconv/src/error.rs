//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AconvError {
    /// Tensor dimensions do not line up (wrong rank, mismatched channels, …).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A scalar argument is out of its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was called against stale or inconsistent cached state.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A file failed to parse (IDX, PGM, checkpoint, …).
    #[error("data format: {0}")]
    DataFormat(String),

    /// Training diverged or produced non-finite values.
    #[error("training: {0}")]
    Train(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl AconvError {
    /// Short machine-parsable category label, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            AconvError::ShapeMismatch(_) => "shape",
            AconvError::InvalidArgument(_) => "argument",
            AconvError::InvalidState(_) => "state",
            AconvError::DataFormat(_) => "format",
            AconvError::Train(_) => "train",
            AconvError::Io(_) => "io",
        }
    }

    /// The bare description, without the category prefix `Display` adds.
    pub fn detail(&self) -> String {
        match self {
            AconvError::ShapeMismatch(s)
            | AconvError::InvalidArgument(s)
            | AconvError::InvalidState(s)
            | AconvError::DataFormat(s)
            | AconvError::Train(s) => s.clone(),
            AconvError::Io(e) => e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, AconvError>;
