use thiserror::Error;

/// Errors raised by models, path simulation, score recursions and oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("diffusion must be strictly positive, got {value} at {point:?}")]
    NonPositiveDiffusion { value: f64, point: Vec<f64> },

    #[error("callback `{callback}` returned a non-finite value at {point:?}")]
    NonFiniteModelOutput { callback: &'static str, point: Vec<f64> },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("path {path_id} diverged (non-finite state) at step {step}")]
    DivergentPath { path_id: u64, step: usize },

    #[error("singular step geometry at step {step}: |det| = {determinant:e}")]
    SingularStep { step: usize, determinant: f64 },

    #[error("covector exploded at step {step}: |nu| = {norm:e}")]
    CovectorExplosion { step: usize, norm: f64 },

    #[error("estimator `{estimator}` requires the initial score, but the initial law has none")]
    MissingInitialScore { estimator: &'static str },

    #[error(
        "estimator `{estimator}` requires additive noise; use the divergence-kernel estimator for multiplicative noise"
    )]
    UnsupportedNoise { estimator: &'static str },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

pub type Result<T> = std::result::Result<T, ScoreError>;
