use thiserror::Error;

use crate::grammar::RuleId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid document: {0}")]
    Schema(String),

    #[error("input contains no points")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no brick clusters survived filtering")]
    NoBricksFound,

    #[error("degenerate cluster: {0}")]
    DegenerateCluster(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("guard failed for rule {0:?}")]
    GuardFailed(RuleId),

    #[error("wall spec too small: {0}")]
    SpecTooSmall(String),

    #[error("derivation replay diverged at step {step}: {message}")]
    Replay { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
