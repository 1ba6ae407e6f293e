use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The series is too short for the requested statistic; callers treat
    /// this as "reject the day" rather than a hard failure.
    #[error("{what}: need at least {needed} observations, got {got}")]
    TooShort {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    /// A variance or normaliser came out as zero (flat day).
    #[error("degenerate {0}")]
    Degenerate(&'static str),

    #[error("regressor has no variation within any symbol")]
    NoVariation,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error signals a day that should be skipped rather than
    /// a failure of the run.
    pub fn is_day_rejection(&self) -> bool {
        matches!(self, Error::TooShort { .. } | Error::Degenerate(_))
    }
}
