use std::path::PathBuf;

use crate::model::MlmModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus has no sentences")]
    EmptyCorpus,

    #[error("sentence has no maskable positions")]
    EmptySentence,

    #[error("{0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("malformed input: {0}")]
    Format(String),

    /// Training produced a non-finite loss or gradient. The model is the last
    /// state that passed all checks.
    #[error("training diverged at batch {batch}: {reason}")]
    Diverged {
        batch: usize,
        reason: String,
        last_good: Box<MlmModel>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
