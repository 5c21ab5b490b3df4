use std::fmt;
use std::io;

use thiserror::Error;

/// One failed configuration check, addressed by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn join(issues: &[ConfigIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {}", join(.0))]
    Config(Vec<ConfigIssue>),

    #[error(transparent)]
    Core(#[from] sae_core::Error),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("png error: {0}")]
    Png(#[from] png::EncodingError),

    #[error("checkpoint {0} has no SVM section; train with labeled data first")]
    MissingSvm(String),

    #[error("guided runs need a replay label file (set `oracle`)")]
    MissingOracle,

    #[error("data.test is required for this command")]
    MissingTestSet,

    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
