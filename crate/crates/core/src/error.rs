use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ForgeError>;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("I/O error on '{}': {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed input '{}': {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inconsistent registry: {0}")]
    Registry(String),

    #[error("empty relation corpus")]
    EmptyRelationCorpus,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("image error on '{}': {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("provider '{provider}' failed: {message}")]
    Provider { provider: String, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl ForgeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        ForgeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        ForgeError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        ForgeError::Image {
            path: path.into(),
            source,
        }
    }
}
