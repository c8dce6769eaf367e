use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, unparsable or inconsistent configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] comir::ComirError),
    #[error(transparent)]
    Registration(#[from] comir_registration::RegistrationError),
    #[error(transparent)]
    Eval(#[from] comir_eval::EvalError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Stage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration errors, 3 for failures while a stage runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Stage(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
