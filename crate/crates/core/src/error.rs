use thiserror::Error;

/// Errors raised across the decomposition pipeline.
#[derive(Debug, Error)]
pub enum LscError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("infeasible problem: {0}")]
    Infeasible(String),
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),
    #[error("degenerate result: {0}")]
    DegenerateResult(String),
    /// Raised when a column sketch contained no usable inliers; retry with another seed.
    #[error("sketch needs resampling (seed {seed}): {reason}")]
    ResampleNeeded { seed: u64, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LscError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            LscError::InvalidInput(_) | LscError::UnsupportedRegime(_) | LscError::Json(_) => 2,
            LscError::Io(_) => 2,
            LscError::Degenerate(_)
            | LscError::Infeasible(_)
            | LscError::DegenerateResult(_)
            | LscError::ResampleNeeded { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, LscError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LscError::InvalidInput(msg.into()))
}
