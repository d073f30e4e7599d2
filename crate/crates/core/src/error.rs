use thiserror::Error;

/// Errors produced by model construction, the solvers and file loading.
#[derive(Debug, Error)]
pub enum IrlError {
    #[error("reward unspecified")]
    RewardUnspecified,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// A factorization, solve or iteration did not meet its accuracy target.
    /// `best` carries the best iterate when the failing routine has one.
    #[error("numerical failure: {reason}")]
    Numerical { reason: String, best: Option<Vec<f64>> },

    /// Phase-1 could not find a point satisfying every margin constraint strictly.
    /// `max_violation` is the phase-1 optimum (positive means violated), `multipliers`
    /// the phase-1 dual values on the margin rows.
    #[error("infeasible: reduce margin (phase-1 max violation {max_violation:.3e})")]
    Infeasible { max_violation: f64, point: Vec<f64>, multipliers: Vec<f64> },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IrlError {
    pub(crate) fn numerical(reason: impl Into<String>) -> Self {
        IrlError::Numerical { reason: reason.into(), best: None }
    }
}

pub type Result<T> = std::result::Result<T, IrlError>;
