use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field shape mismatch: {0}")]
    Shape(String),

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge after {iterations} iterations (grad sup {grad_sup:.3e} > tol {tol:.3e})")]
    NotConverged { iterations: usize, grad_sup: f64, tol: f64 },

    #[error("continuation aborted at step {step} (p = {p}): {reason}")]
    AbortedStep { step: usize, p: f64, reason: String },

    #[error("hypothesis (H0) violated: {0}")]
    H0Violation(String),

    #[error("missing config key '{key}'")]
    MissingKey { key: String },

    #[error("bad value for '{key}' on line {line}: {reason}")]
    BadValue { key: String, line: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
