use std::path::PathBuf;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("corrupted policy parameters: {0}")]
    CorruptParams(String),

    #[error("context has length {got}, policy order is {expected}")]
    ContextLength { expected: usize, got: usize },

    #[error("token {0} is not in the vocabulary")]
    UnknownToken(u32),

    #[error("invalid sampling config: {0}")]
    InvalidSampling(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("success-set enumeration needs {candidates} candidates (limit {limit}); shrink max_response_len or the vocabulary")]
    EnumerationBudget { candidates: u128, limit: u128 },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("non-finite {what} at step {step}; offending groups: {dump}")]
    NonFinite {
        what: String,
        step: u64,
        dump: String,
    },

    #[error("malformed policy file at line {line}: {reason}")]
    PolicyFormat { line: usize, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
