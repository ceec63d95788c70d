use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
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

    #[error("duplicate triplet id `{0}`")]
    DuplicateId(String),

    #[error("unknown split label `{0}`")]
    UnknownSplit(String),

    #[error("image `{0}` has no feature vector")]
    MissingImage(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("taxonomy cycle through synset `{0}`")]
    Cycle(String),

    #[error("synset `{child}` names unknown parent `{parent}`")]
    DanglingParent { child: String, parent: String },

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("triplet `{0}` has no original decoys")]
    NoOriginalDecoys(String),

    #[error("item `{id}` has {actual} decoys, expected {expected}")]
    DecoyCount {
        id: String,
        expected: usize,
        actual: usize,
    },

    #[error("candidate index {index} out of range for `{id}` ({len} candidates)")]
    CandidateIndex { id: String, index: usize, len: usize },

    #[error("item `{0}` has no human answers")]
    MissingHumanAnswers(String),

    #[error("training diverged at iteration {iteration} (lr {lr}): loss is {loss}")]
    Diverged { iteration: usize, lr: f64, loss: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
