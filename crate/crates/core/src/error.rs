use thiserror::Error;

use crate::tensor::snapshot::SnapshotError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint is missing parameters: {}", .0.join(", "))]
    CheckpointMissing(Vec<String>),
    #[error("format error: {0}")]
    Format(#[from] SnapshotError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
