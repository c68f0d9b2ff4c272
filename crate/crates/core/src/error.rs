use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RmlError> = std::result::Result<T, E>;

/// Every failure the lab can report. `category()` gives the stable,
/// machine-parseable name printed by the CLI.
#[derive(Debug, Error)]
pub enum RmlError {
    #[error("field `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        field: String,
        line: Option<usize>,
        message: String,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),
    #[error("training diverged at iteration {iteration}: {message}")]
    Training { iteration: usize, message: String },
    #[error("output directory is locked by another run: {}", .0.display())]
    Locked(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RmlError {
    pub fn category(&self) -> &'static str {
        match self {
            RmlError::Config { .. } => "config",
            RmlError::Input(_) => "input",
            RmlError::State(_) => "state",
            RmlError::Internal(_) => "internal",
            RmlError::Format { .. } => "format",
            RmlError::DatasetNotFound(_) => "dataset-not-found",
            RmlError::Training { .. } => "training",
            RmlError::Locked(_) => "locked",
            RmlError::Io { .. } => "io",
            RmlError::Json(_) => "json",
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        RmlError::Config {
            field: field.into(),
            line: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RmlError::Io {
            path: path.into(),
            source,
        }
    }
}
