use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("token error: id {id} at index {index} is outside the vocabulary (size {vocab_size})")]
    Token {
        index: usize,
        id: u32,
        vocab_size: usize,
    },

    #[error("checkpoint format error: {0}")]
    Format(FormatError),

    #[error("template error: field `{field}` is not available")]
    Template { field: String },

    #[error("template syntax error: {0}")]
    TemplateSyntax(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: validation error: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("ordering budget exceeded: {k}! = {count} orderings is above the limit of {limit}; use sample:M instead")]
    Budget { k: usize, count: u64, limit: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("thread pool error: {0}")]
    ThreadPool(String),
}

/// Distinct failure classes when reading a checkpoint file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("tensor `{name}`: {message}")]
    TensorMismatch { name: String, message: String },
}

impl From<FormatError> for Error {
    fn from(e: FormatError) -> Self {
        Error::Format(e)
    }
}

impl Error {
    /// True for errors caused by bad user input (files, flags, plans) rather
    /// than by the runtime. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Template { .. }
                | Error::TemplateSyntax(_)
                | Error::Plan(_)
                | Error::Argument(_)
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Config(_)
                | Error::Budget { .. }
                | Error::Format(_)
                | Error::Token { .. }
        )
    }
}
