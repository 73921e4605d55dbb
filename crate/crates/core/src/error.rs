use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. The variant name doubles as the
/// machine-readable error kind emitted by the command-line driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unparsable data row {row}: {reason}")]
    UnparsableRow { row: usize, reason: String },
    #[error("timestamp at data row {0} does not increase")]
    NonMonotonicTimestamp(usize),
    #[error("non-positive close price at data row {0}")]
    NonPositivePrice(usize),
    #[error("series too short: need at least {needed} points, have {actual}")]
    SeriesTooShort { needed: usize, actual: usize },
    #[error("infeasible fold plan: {0}")]
    InfeasibleFoldPlan(String),
    #[error("invalid fractions: {0}")]
    InvalidFractions(String),

    #[error("action {action} is not valid in {mode} mode")]
    InvalidActionForMode { action: usize, mode: &'static str },
    #[error("range too short: need at least {needed} points, have {actual}")]
    RangeTooShort { needed: usize, actual: usize },
    #[error("episode exhausted at index {0}")]
    EpisodeExhausted(usize),

    #[error("replay holds {have} experiences, need {need}")]
    BufferTooSmall { need: usize, have: usize },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("checkpoint list is empty")]
    EmptyCheckpointList,
    #[error("invalid checkpoint file: {0}")]
    InvalidCheckpoint(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "MissingColumn",
            Error::UnparsableRow { .. } => "UnparsableRow",
            Error::NonMonotonicTimestamp(_) => "NonMonotonicTimestamp",
            Error::NonPositivePrice(_) => "NonPositivePrice",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::InfeasibleFoldPlan(_) => "InfeasibleFoldPlan",
            Error::InvalidFractions(_) => "InvalidFractions",
            Error::InvalidActionForMode { .. } => "InvalidActionForMode",
            Error::RangeTooShort { .. } => "RangeTooShort",
            Error::EpisodeExhausted(_) => "EpisodeExhausted",
            Error::BufferTooSmall { .. } => "BufferTooSmall",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::EmptyCheckpointList => "EmptyCheckpointList",
            Error::InvalidCheckpoint(_) => "InvalidCheckpoint",
            Error::UnknownKey(_) => "UnknownKey",
            Error::InvalidValue { .. } => "InvalidValue",
            Error::MissingFile(_) => "MissingFile",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidValue {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
