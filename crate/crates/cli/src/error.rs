use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("{context}: {source}")]
    Experiment {
        context: String,
        #[source]
        source: mmcr::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report: {0}")]
    Report(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Experiment { .. } => "experiment",
            CliError::Io { .. } => "io",
            CliError::Report(_) => "report",
            CliError::Json(_) => "json",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Payload<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Payload { error: self.kind(), message: self.to_string() })
            .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}

/// Attaches experiment context to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for mmcr::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Experiment { context: what(), source })
    }
}
