use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at record {index} (line {line}): {message}")]
    Parse {
        index: usize,
        line: usize,
        message: String,
    },

    #[error("duplicate sample id '{0}'")]
    DuplicateId(String),

    #[error("invalid sample '{id}': {message}")]
    InvalidSample { id: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("memory for relation '{0}' already stored")]
    DuplicateRelation(String),

    #[error("instruction error: {0}")]
    Instruction(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("replay miss: {0}")]
    ReplayMiss(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("task {task} of sequence {sequence} failed (restore point {checkpoint:?}): {source}")]
    Task {
        sequence: usize,
        task: usize,
        checkpoint: Option<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
