use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (network, scenario, CSV). Reported
    /// before any stepping takes place.
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("unknown lane id `{0}`")]
    UnknownLane(String),

    #[error("unknown section id `{0}`")]
    UnknownSection(String),

    /// Physical nonsense passed to a model function, e.g. a non-positive gap.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("incomplete decision context: {0}")]
    IncompleteContext(String),

    /// A simulation invariant was violated; carries a diagnostic dump.
    #[error("invariant breach at t={time:.3}s: {detail}")]
    InvariantBreach { time: f64, detail: String },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors that stem from user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::File { .. } | Error::UnknownLane(_) | Error::UnknownSection(_) | Error::Json(_)
        )
    }
}
