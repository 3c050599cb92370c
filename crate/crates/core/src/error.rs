use thiserror::Error;

/// Errors raised by the solver and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("node too close to the grid boundary for the quadrature: {0}")]
    Truncation(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("no convergence after {iterations} iterations (last residual {last_residual:.3e})")]
    NoConvergence {
        iterations: usize,
        last_residual: f64,
        history: Vec<f64>,
    },

    #[error("solution quality: {0}")]
    Quality(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
