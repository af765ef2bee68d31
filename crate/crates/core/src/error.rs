use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid axis {axis} for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("log of non-positive value {0}")]
    NonPositiveLog(f64),
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported pixmap: {0}")]
    UnsupportedPixmap(String),
    #[error("malformed pixmap {path}: {reason}")]
    MalformedPixmap { path: PathBuf, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

impl Error {
    /// Process exit status for the command-line tool: 2 for bad input or
    /// configuration, 3 for file problems, 4 for numeric failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io(_) | Error::MalformedPixmap { .. } | Error::UnsupportedPixmap(_) | Error::Checkpoint(_) => 3,
            Error::NonFinite { .. } | Error::NonPositiveLog(_) | Error::Diverged { .. } => 4,
            _ => 2,
        }
    }
}
