use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DsieError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DsieError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("corpus empty after filtering")]
    EmptyCorpus,

    #[error("empty sequence")]
    EmptySequence,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("item index {index} out of range for catalog of {items} items")]
    IndexOutOfRange { index: usize, items: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint catalog hash {checkpoint} does not match corpus hash {corpus}")]
    CatalogMismatch { checkpoint: String, corpus: String },

    #[error("training diverged at epoch {epoch}: {term} loss is {value}")]
    Diverged {
        epoch: usize,
        term: &'static str,
        value: f64,
    },

    #[error("config: {0}")]
    Config(String),
}

impl DsieError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DsieError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DsieError::InvalidArgument(msg.into())
    }
}
