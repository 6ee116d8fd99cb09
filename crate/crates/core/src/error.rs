use std::path::PathBuf;

use protoadapt_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("config error: {0}")]
    Config(String),

    #[error("ingestion error at {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at {stage} {index}: {detail}")]
    NonFiniteLoss {
        stage: &'static str,
        index: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
