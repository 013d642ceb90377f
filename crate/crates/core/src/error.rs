use std::io;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by the exit-code family the command line maps them to:
/// argument/configuration problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("undefined rate: {0}")]
    Undefined(String),

    #[error("load error: {0}")]
    Load(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// True for failures of the numeric kind (non-finite values, domain errors).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. } | Error::Training(_) | Error::Undefined(_)
        )
    }

    /// True for argument and configuration problems.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Argument(_) | Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
