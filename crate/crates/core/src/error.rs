use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no table could be loaded from {0}")]
    EmptyRepository(PathBuf),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("join path references column {column} of table {table}, which is missing")]
    KeyColumnMissing { table: String, column: usize },

    #[error("profile vectors have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),

    #[error("unknown column {0}")]
    UnknownColumn(String),

    #[error("task failure: {0}")]
    TaskFailure(String),

    #[error("brute force guard: {0} candidates exceeds the limit of {1}")]
    TooLarge(usize, usize),

    #[error("join-everything would add {0} columns, more than the cap of {1}")]
    TooWide(usize, usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
