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

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty KB")]
    EmptyKb,

    #[error("no linkable sentences")]
    NoLinkableSentences,

    #[error("unknown corpus format `{0}`")]
    UnknownFormat(String),

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: usize },

    #[error("entity `{0}` has no KB link")]
    Unlinked(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("missing gold labels: {0}")]
    MissingGold(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty input")]
    EmptyInput,

    #[error("step {t} outside schedule range [0, {total}]")]
    StepOutOfRange { t: u64, total: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
