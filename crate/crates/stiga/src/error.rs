//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, assembly, and solver routines.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evaluation point {0} outside the parametric domain [0, 1]")]
    PointOutsideDomain(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular geometry: |det J| = {det:.3e} at eta = {location:?}")]
    SingularGeometry { det: f64, location: Vec<f64> },

    #[error("matrix is not symmetric positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("eigensolver failed to converge after {sweeps} sweeps on a {n}x{n} pencil; pencil dump:\n{dump}")]
    EigenNonConvergence { n: usize, sweeps: usize, dump: String },

    #[error("nonpositive coefficient sample {value:.3e} in direction {direction}")]
    NonpositiveCoefficient { direction: usize, value: f64 },

    #[error("nonpositive diagonal scaling entry {value:.3e} at index {index}")]
    NonpositiveScaling { index: usize, value: f64 },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("refusing to run: {0}")]
    ResourceRefused(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
