use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {id:?} on lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },

    #[error("vocabulary empty: no token satisfies the document-frequency window")]
    VocabularyEmpty,

    #[error("term-document matrix is all zero")]
    AllZeroMatrix,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("external service error: {0}")]
    Transport(String),

    #[error("embedding batch {batch} failed after {attempts} attempts: {message}")]
    EmbeddingBatch {
        batch: usize,
        attempts: usize,
        message: String,
    },

    /// The chat model failed after retrieval succeeded; `answer` carries the
    /// retrieved sources with an empty text.
    #[error("answer degraded: {message}")]
    DegradedAnswer {
        message: String,
        answer: Box<crate::rag::GroundedAnswer>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// True for failures caused by a remote model or embedding endpoint.
    pub fn is_external(&self) -> bool {
        matches!(
            self,
            Error::Transport(_) | Error::EmbeddingBatch { .. } | Error::DegradedAnswer { .. }
        )
    }
}
