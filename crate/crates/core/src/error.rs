use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("correlation undefined: both images are constant")]
    UndefinedCorrelation,
    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),
    #[error("registration failed: peak correlation {peak:.4} below floor {floor:.4}")]
    RegistrationFailed { peak: f64, floor: f64 },
    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        #[source]
        source: cdp_autodiff::AutodiffError,
    },
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Autodiff(#[from] cdp_autodiff::AutodiffError),
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }
}
