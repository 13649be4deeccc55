use thiserror::Error;

/// Failures reported by a denoiser backend.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DenoiserError {
    #[error("request precondition failed: {0}")]
    Precondition(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("position coverage mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    Coverage {
        missing: Vec<usize>,
        unexpected: Vec<usize>,
    },
    #[error("remote reported error: {0}")]
    Remote(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("denoiser failed at step {step}: {source}")]
    Denoiser {
        step: usize,
        #[source]
        source: DenoiserError,
    },
    #[error("trace format error at line {line}: {message}")]
    TraceFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
