use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("input too short: length {len} is below kernel width {width}")]
    InputTooShort { len: usize, width: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    /// NaN or Inf reached a place where it must not (loss, gradient, parameter).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("gradient check unreliable: {0}")]
    Unreliable(String),

    #[error("validation error at line {line}, field `{field}`: {message}")]
    Validation {
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing ids: {0:?}")]
    MissingIds(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("dialogue {id}: {source}")]
    InDialogue {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_dialogue(id: impl Into<String>, source: Error) -> Self {
        Error::InDialogue {
            id: id.into(),
            source: Box::new(source),
        }
    }

    /// The innermost error, looking through dialogue context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InDialogue { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by non-finite numbers (mapped to exit code 3 by the CLI).
    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Error::Numeric(_))
    }
}
