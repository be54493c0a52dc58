use std::io;

/// Errors produced anywhere in the pipeline.
///
/// Every variant maps to a short, stable category string (see [`Error::category`])
/// that the command-line front end prints for machine consumption.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("corrupt data: {0}")]
    Corruption(String),
    #[error("malformed response: {msg}")]
    Format { msg: String, raw: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Contract(_) => "contract",
            Error::Numeric(_) => "numeric",
            Error::Corruption(_) => "corruption",
            Error::Format { .. } => "format",
            Error::Transport(_) => "transport",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
