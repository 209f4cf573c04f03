use std::path::{Path, PathBuf};

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("unknown token: {0:?}")]
    UnknownToken(String),

    #[error("group too small: need at least 2 rewards, got {0}")]
    GroupTooSmall(usize),

    #[error("non-finite ratio: log-probability difference {diff} exceeds the overflow bound {bound}")]
    NonFiniteRatio { diff: f64, bound: f64 },

    #[error("non-finite gradient while processing prompt {prompt_id}")]
    NonFiniteGradient { prompt_id: String },

    #[error("no prompt registry entry for {0}")]
    MissingRegistryEntry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset split: {0}")]
    InvalidSplit(String),

    #[error("dataset not found: {}", .0.display())]
    DatasetMissing(PathBuf),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{}: line {line}: {message}", path.display())]
    MalformedRecord { path: PathBuf, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Error {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Error {
        Error::Json { context: context.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
