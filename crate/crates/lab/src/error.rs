use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse {}: {source}", path.display())]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Core(#[from] rwrs_core::Error),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot encode results: {0}")]
    Encode(String),
}

impl LabError {
    /// Process exit code: 2 for anything wrong with the request, 4 for i/o failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Parse { .. } | LabError::Core(_) => 2,
            LabError::Io { .. } | LabError::Encode(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn config_error(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}
