use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Ran to completion but at least one check failed.
    pub const CHECK_FAILED: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error(transparent)]
    Core(#[from] convexlab::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use convexlab::Error as E;
        match self {
            CliError::NonConvergence(_) => exit::NUMERICAL,
            CliError::Core(E::NanLoss { .. } | E::UnstableWeight { .. }) => exit::NUMERICAL,
            _ => exit::INPUT,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
