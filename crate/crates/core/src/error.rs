use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// Every particle has zero likelihood for the measurement at `step` (1-based).
    #[error("total weight degeneracy at step {step}")]
    Degeneracy { step: usize },

    #[error("mixture fit failed: {0}")]
    FitFailed(String),

    #[error("model diverged: {0}")]
    Divergence(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("undefined reference: {0}")]
    UndefinedReference(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("reference generation failed: {0}")]
    Reference(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
