use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("word {0:?} is already in the vocabulary")]
    DuplicateWord(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),

    #[error("sequence of length {len} exceeds max_len {max}")]
    LengthExceeded { len: usize, max: usize },

    #[error("backward called on a value that was not recorded on this tape")]
    GraphNotRecorded,

    #[error("empty batch")]
    EmptyBatch,

    #[error("model is untrained: {0}")]
    UntrainedModel(String),

    #[error("classifier needs at least two classes, found {0}")]
    DegenerateLabels(usize),

    #[error("{0} test sentence(s) also appear in the training split")]
    SplitLeakage(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }
}
