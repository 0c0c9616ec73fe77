use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or an invalid configuration value.
    #[error("{0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    /// Failures while running: numerical breakdown, malformed input files.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(field: &str, message: impl std::fmt::Display) -> Self {
        CliError::Config(format!("invalid value for `{field}`: {message}"))
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: err.to_string() }
    }

    /// 1 for usage and configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Runtime(_) => 2,
        }
    }
}

impl From<eirl1::Error> for CliError {
    fn from(e: eirl1::Error) -> Self {
        use eirl1::Error as E;
        match e {
            E::Config { .. } | E::Specification { .. } | E::Usage(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
