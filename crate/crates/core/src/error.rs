use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Schema,
    Parse,
    Domain,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("missing column '{0}' in CSV header")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("line {line}: missing key '{key}'")]
    MissingKey { line: usize, key: String },

    #[error("{0}")]
    Domain(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Schema(_) | Error::MissingColumn(_) => ErrorKind::Schema,
            Error::Row { .. }
            | Error::Line { .. }
            | Error::MissingKey { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Toml(_) => ErrorKind::Parse,
            Error::Domain(_) => ErrorKind::Domain,
        }
    }
}
