use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CascadeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CascadeError {
    /// A parameter violates its documented range.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The sequence decomposition needs `eta_n > eta_y` and at least one stage.
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("too many undecided trials: {undecided} of {trials} hit the step cap")]
    TooManyUndecided { undecided: u64, trials: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CascadeError {
    /// Whether the error stems from bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            CascadeError::InvalidParams(_) | CascadeError::UnsupportedRegime(_)
        )
    }
}
