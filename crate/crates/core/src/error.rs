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

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown stance {0:?}")]
    UnknownStance(String),

    #[error("unknown feature {0:?}")]
    UnknownFeature(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate vocabulary: {0}")]
    DegenerateVocabulary(String),

    #[error("node {0} has no outgoing edges")]
    DanglingNode(String),

    #[error("unscorable event {ego} -> {alter} at {ts}: neither text nor sentiment present")]
    UnscorableEvent { ego: String, alter: String, ts: i64 },

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => "parse",
            Error::UnknownStance(_) => "unknown-stance",
            Error::UnknownFeature(_) => "unknown-feature",
            Error::InvalidParam(_) => "invalid-param",
            Error::InvalidInput(_) => "invalid-input",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::DegenerateVocabulary(_) => "degenerate-vocabulary",
            Error::DanglingNode(_) => "dangling-node",
            Error::UnscorableEvent { .. } => "unscorable-event",
            Error::Protocol(_) => "protocol",
            Error::Context { source, .. } => source.category(),
        }
    }
}
