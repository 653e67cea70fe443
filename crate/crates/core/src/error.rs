use thiserror::Error;

/// Errors produced across the simulation and inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization hit a pivot at or below the relative threshold.
    #[error("matrix is not positive definite (failing pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("trial generation failed: {0}")]
    Generation(String),

    /// Mode search did not converge; `best` holds the best hyperparameter
    /// vector found (log scale) and `objective` its log posterior.
    #[error("inference failed: {message}")]
    Inference {
        message: String,
        best: Vec<f64>,
        objective: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable code used when recording failed replicates.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Generation(_) => "generation",
            Error::Inference { .. } => "inference",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
