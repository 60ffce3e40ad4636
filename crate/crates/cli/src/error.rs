use std::path::PathBuf;

use cdp_core::CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{what} not found at {}; run `cdp-lab {command}` first", path.display())]
    Missing {
        what: String,
        path: PathBuf,
        command: &'static str,
    },
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("acceptance check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl LabError {
    /// 1 for usage and config problems, 3 for failed acceptance checks and
    /// 2 for everything that goes wrong inside the pipeline.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) | LabError::Config(_) => 1,
            LabError::CheckFailed(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn config_err(e: CoreError) -> LabError {
    LabError::Config(e.to_string())
}
