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

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate {kind} {id}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("bad magic: expected EMB1, found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("truncated embedding file: {0}")]
    Truncated(String),

    #[error("dim mismatch at id {id}: expected {expected}, found {found}")]
    DimMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in vector {id}")]
    NonFinite { id: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing embedding for id {0}")]
    MissingEmbedding(String),

    #[error("missing candidate {0}")]
    MissingCandidate(String),

    #[error("no labels for question {0}")]
    MissingLabels(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("reader model is untrained (all weights zero)")]
    Untrained,

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
