//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimError {
    /// A coefficient evaluation or scheme step produced a non-finite value.
    #[error("non-finite value at t = {t} (|x| = {state_norm}), step {step}")]
    NumericOverflow { t: f64, state_norm: f64, step: usize },

    /// Requested built-in problem name does not exist.
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    /// Step sizes or grids are not integer-ratio compatible.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Step size outside the admissible range (0, 1].
    #[error("invalid step size {0}; must lie in (0, 1]")]
    InvalidStepSize(f64),

    /// Stability index outside (0, 1).
    #[error("invalid stability index {0}; must lie strictly in (0, 1)")]
    InvalidIndex(f64),

    /// Subordinator walk exceeded its step budget before covering the horizon.
    #[error("subordinator did not reach horizon {horizon} within {max_steps} steps")]
    HorizonNotReached { horizon: f64, max_steps: usize },

    /// Query time outside the range covered by a simulated path.
    #[error("query t = {t} outside covered range [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    /// Every Monte Carlo path failed at some step size; no estimate exists.
    #[error("all {n_paths} paths failed at dt = {dt}; estimator degenerate")]
    EstimatorDegenerate { dt: f64, n_paths: usize },

    /// Input data rejected by a numerical routine.
    #[error("invalid data: {0}")]
    InvalidData(String),
}

pub type SimResult<T> = Result<T, SimError>;
