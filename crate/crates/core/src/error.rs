use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum SanError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for {what} of size {bound}")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("gradient tape inconsistency: {0}")]
    Consistency(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("invalid propagation tree in sample {sample}: {message}")]
    Structure { sample: String, message: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("unknown event {requested:?}; available events: {available:?}")]
    UnknownEvent {
        requested: String,
        available: Vec<String>,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

impl SanError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SanError::Config(_) => ErrorKind::Config,
            SanError::Numeric(_) => ErrorKind::Numeric,
            SanError::Io { .. } => ErrorKind::Io,
            SanError::Dimension { .. }
            | SanError::Index { .. }
            | SanError::Consistency(_)
            | SanError::Parse { .. }
            | SanError::Structure { .. }
            | SanError::InsufficientData(_)
            | SanError::UnknownEvent { .. }
            | SanError::Data(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SanError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        SanError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

pub type Result<T, E = SanError> = std::result::Result<T, E>;
