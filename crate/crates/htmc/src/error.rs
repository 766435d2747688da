use std::path::{Path, PathBuf};

/// Failure of a command, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Parameter(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Failure {
    pub fn param(msg: impl Into<String>) -> Self {
        Failure::Parameter(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Failure::Io { path: path.to_path_buf(), source }
    }

    /// 2 for bad parameters or input, 3 for numeric failure, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Parameter(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Io { .. } => 4,
        }
    }
}

impl From<htmc_core::Error> for Failure {
    fn from(e: htmc_core::Error) -> Self {
        match e {
            htmc_core::Error::Numeric(_) | htmc_core::Error::Reducible { .. } => Failure::Numeric(e.to_string()),
            other => Failure::Parameter(other.to_string()),
        }
    }
}

pub type Result<T, E = Failure> = std::result::Result<T, E>;
