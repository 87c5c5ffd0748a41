//! Error types shared by every module.

use thiserror::Error;

#[derive(Error, Debug, Clone)]
pub enum SlopeError {
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,
    #[error("dimension mismatch: {0}")]
    DimensionError(String),
    #[error("argument outside its domain: {0}")]
    DomainError(String),
    #[error("covariance matrix is not symmetric")]
    InvalidCovariance,
    #[error("vector contains non-finite entries")]
    InvalidVector,
    #[error("pattern is identically zero")]
    EmptyPattern,
    #[error("cluster values must be strictly decreasing and positive")]
    InvalidClusterValues,
    #[error("tuning sequence violates the required ordering: {0}")]
    InvalidTuning(String),
    #[error("solver did not converge within {iterations} iterations (kkt residual {kkt_residual:.3e})")]
    NotConverged {
        iterations: usize,
        kkt_residual: f64,
    },
    #[error("invalid design specification: {0}")]
    InvalidDesign(String),
    #[error("calibration target {target} unattainable (achieved ceiling {achieved})")]
    CalibrationFailed { target: f64, achieved: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SlopeError>;
