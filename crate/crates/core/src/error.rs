use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch at layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("branch {branch}: {source}")]
    Branch {
        branch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("report row {row}: accuracy {acc} inconsistent with (Sp+Se)/2 = {expected}")]
    InconsistentAccuracy { row: String, acc: f64, expected: f64 },

    #[error("{0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
