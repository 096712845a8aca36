use std::path::PathBuf;

/// Errors produced anywhere in the compression pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid geometry in {op}: {detail}")]
    Geometry { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("numeric divergence at {step}: {detail}")]
    Divergence { step: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("unknown task '{0}'")]
    UnknownTask(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownTask(_) | Error::ArchMismatch(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Io { .. } | Error::Corrupt { .. } | Error::Json(_) | Error::EmptyDataset(_) => 4,
            Error::Parse { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
