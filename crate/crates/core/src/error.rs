use thiserror::Error;

use crate::grid::Parity;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported derivative order {0} (supported: 1..=4)")]
    UnsupportedOrder(usize),

    #[error("unsupported Sobolev index {0} (supported: 0, 2, 4)")]
    UnsupportedSobolevIndex(usize),

    #[error("grid too coarse: alpha*h = {alpha_h:.3e} exceeds {limit}")]
    GridTooCoarse { alpha_h: f64, limit: f64 },

    #[error("parity mismatch: expected {expected:?} grid function of length {expected_len}, got length {got}")]
    ParityMismatch {
        expected: Parity,
        expected_len: usize,
        got: usize,
    },

    #[error("grid/profile mismatch: {0}")]
    GridMismatch(String),

    #[error("interpolation outside map range: z = {z:.6e} > z_max = {z_max:.6e}")]
    OutsideMapRange { z: f64, z_max: f64 },

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("singular resolvent at n = {n}: n^2*lambda is within {distance:.3e} of the spectrum of L")]
    SingularResolvent { n: i64, distance: f64 },

    #[error("newton did not converge after {iterations} iterations (residual history: {history:?})")]
    NewtonDiverged { iterations: usize, history: Vec<f64> },

    #[error("linear solver failure: {0}")]
    LinearSolve(String),

    #[error("bifurcation data unavailable: {0}")]
    Bifurcation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
