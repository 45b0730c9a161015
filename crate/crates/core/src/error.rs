use std::path::PathBuf;

use thiserror::Error;

use crate::numcore::NumError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: String, expected: u32 },
    #[error("checkpoint checksum mismatch: header says {expected}, payload hashes to {found}")]
    Checksum { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical abort: {0}")]
    NonFinite(String),
}

/// Coarse error classes, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn config(field: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::Shape(_) => ErrorClass::Config,
            Error::NonFinite(_) => ErrorClass::Numeric,
            Error::Num(e) => match e {
                NumError::Overflow { .. } | NumError::NonFiniteValue { .. } => ErrorClass::Numeric,
                NumError::Config(_) | NumError::ShapeMismatch { .. } => ErrorClass::Config,
                NumError::LabelOutOfRange { .. } | NumError::LabelMismatch { .. } => ErrorClass::Data,
                _ => ErrorClass::Config,
            },
            Error::Data(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Version { .. }
            | Error::Checksum { .. }
            | Error::Checkpoint(_) => ErrorClass::Data,
        }
    }
}
