use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("corpus is empty after preprocessing")]
    EmptyCorpus,
    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("topic {topic} out of range (model has {topics} topics)")]
    TopicOutOfRange { topic: usize, topics: usize },
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("word index {index} out of range (vocabulary has {size} words)")]
    WordOutOfRange { index: usize, size: usize },
    #[error("document {index} out of range (corpus has {size} documents)")]
    DocumentOutOfRange { index: usize, size: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no eligible target: {0}")]
    Ineligible(String),
    #[error("serialization: {0}")]
    Serialization(String),
    #[error("http error: status {status}: {message}")]
    Http { status: u16, message: String },
    #[error("authentication rejected by remote service")]
    Authentication,
    #[error("quota exhausted; completed categories: {completed:?}")]
    QuotaExhausted { completed: Vec<String> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
