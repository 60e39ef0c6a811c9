use thiserror::Error;

/// Errors raised by the numerical layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("field contains non-finite values ({context})")]
    NonFinite { context: String },
    #[error("field has nonzero mean {mean:e} (tolerance {tol:e})")]
    NonZeroMean { mean: f64, tol: f64 },
    #[error("mask is not binary at cell {index} (value {value})")]
    NonBinaryMask { index: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no double-well root: theta ({theta}) must be below theta_c ({theta_c})")]
    NoRoot { theta: f64, theta_c: f64 },
    #[error("inner fidelity solve did not converge in {iterations} iterations (residual {residual:e})")]
    PicardDiverged { iterations: usize, residual: f64 },
    #[error("trajectory does not match the solver configuration: {0}")]
    TrajectoryMismatch(String),
    #[error("control violates the admissible box: {0}")]
    BoxViolation(String),
    #[error("second-order paths require alpha2 = 0 (got {0})")]
    Alpha2NotZero(f64),
    #[error("Armijo line search failed after {halvings} halvings")]
    LineSearchFailed { halvings: usize },
    #[error("regularised target not stationary after {steps} steps (residual {residual:e})")]
    NotStationary { steps: usize, residual: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
