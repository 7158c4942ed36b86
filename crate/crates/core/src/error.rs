use thiserror::Error;

use crate::linalg::LinalgError;

/// Errors raised while reading case files or assembling a network.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing section `{0}`")]
    MissingSection(String),
    #[error("branch ({0},{1}) has zero impedance")]
    ZeroImpedance(usize, usize),
    #[error("bus {0} has nonzero shunt admittance (shunts are not modeled)")]
    Shunt(usize),
    #[error("reference to unknown bus {0}")]
    UnknownBus(usize),
    #[error("PFR placed on nonexistent line ({0},{1})")]
    UnknownLine(usize, usize),
    #[error("network is disconnected: bus {0} is unreachable from the reference bus")]
    Disconnected(usize),
    #[error("epsilon `{0}` = {1} outside (0, 0.5)")]
    EpsilonRange(String, f64),
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error("{0}")]
    Invalid(String),
}

/// Errors from the droop-augmented Newton power flow.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow diverged after {iterations} iterations (residual {residual:.3e})")]
    Diverged { iterations: usize, residual: f64 },
    #[error("singular power-flow Jacobian at iteration {iteration}")]
    Singular { iteration: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Errors from sensitivity and margin computation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("power-flow Jacobian is singular or ill-conditioned: {0}")]
    Singular(LinalgError),
    #[error("probability {0} outside (0.5, 1)")]
    ProbabilityRange(f64),
    #[error("covariance is not positive semidefinite: quadratic form {value:.3e} for {quantity}")]
    NotPsd { quantity: String, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
