use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {detail}")]
    Input { path: PathBuf, detail: String },
    #[error("backend: {0}")]
    Backend(String),
    #[error("{0}")]
    Pipeline(String),
}

/// Body written to stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } | CliError::Input { .. } => "io",
            CliError::Backend(_) => "backend",
            CliError::Pipeline(_) => "pipeline",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Input { .. } => 3,
            CliError::Backend(_) => 4,
            CliError::Pipeline(_) => 5,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.class(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }
}
