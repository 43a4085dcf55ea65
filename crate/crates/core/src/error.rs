use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("index out of range: {0}")]
    InvalidIndex(String),

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("negative sampler exhausted: user {user} has interacted with every item")]
    ExhaustedSampler { user: usize },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("no evaluable users: every user has an empty ground-truth set")]
    EmptyReport,

    // the cause is part of the message, not a source(), so callers that
    // print error chains do not repeat it
    #[error("i/o error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}
