use std::path::PathBuf;

/// Errors raised anywhere in the event-representation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    Truncation { len: usize, max_len: usize },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: range error: {message}")]
    Range {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error: 3 for numeric failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
