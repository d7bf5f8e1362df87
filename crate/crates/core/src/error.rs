use std::io;

use thiserror::Error;

/// Errors raised by the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error: {0}")]
    Shape(String),

    /// A hyperparameter or argument is outside its valid range.
    #[error("parameter error: {0}")]
    Param(String),

    /// A caller broke an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Input outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A metric was requested on data that cannot support it.
    #[error("metric error: {0}")]
    Metric(String),

    /// Training produced a non-finite value.
    #[error("training error at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

/// What went wrong while decoding an embedding bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic,
    UnsupportedVersion,
    Truncated,
    DimMismatch,
    BadChecksum,
    BadLabel,
    BadPresenceMask,
    DuplicateId,
    InvalidUtf8,
    TrailingBytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bundle format error ({kind:?}) at byte offset {offset}: {detail}")]
pub struct FormatError {
    pub kind: FormatErrorKind,
    pub offset: usize,
    pub detail: String,
}

impl FormatError {
    pub fn new(kind: FormatErrorKind, offset: usize, detail: impl Into<String>) -> Self {
        Self {
            kind,
            offset,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
