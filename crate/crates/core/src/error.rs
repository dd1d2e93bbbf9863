use std::io;

use thiserror::Error;

/// Errors raised anywhere in the ranking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("{}", fmt_validation(*line, message))]
    Validation { line: Option<usize>, message: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("numeric error in unit `{unit}`: {message}")]
    Numeric { unit: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn fmt_validation(line: Option<usize>, message: &str) -> String {
    match line {
        Some(line) => format!("line {line}: validation error: {message}"),
        None => format!("validation error: {message}"),
    }
}

impl Error {
    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation { line: None, message: message.into() }
    }

    pub fn validation_at(line: usize, message: impl Into<String>) -> Self {
        Error::Validation { line: Some(line), message: message.into() }
    }

    pub fn numeric(unit: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric { unit: unit.into(), message: message.into() }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
