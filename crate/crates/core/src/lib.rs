//! Pathwise Monte-Carlo estimators of the score `∇log h_T` for random
//! dynamical systems `x_{n+1} = f(x_n) + σ(x_n) b_n` and for Euler-discretized
//! SDEs `dx = F dt + σ dB`.
//!
//! Three families are provided: kernel differentiation, divergence, and the
//! divergence-kernel mixture that tempers the divergence recursion with an
//! `α` schedule. Each produces one covector per path whose conditional mean
//! given the terminal state is the score; [`estimate`] turns those into
//! binned score estimates and [`oracle`] supplies independent 1-D ground
//! truth by quadrature.

// `!(a > b)` comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discrete_scores;
pub mod error;
pub mod estimate;
pub mod model;
pub mod oracle;
pub mod paths;
pub mod pipeline;
pub mod rng;
pub mod schedules;
pub mod sde_scores;

pub use discrete_scores::{CovectorState, GeometryMode, RecursionOptions, StepGeometry};
pub use error::{Result, ScoreError};
pub use estimate::{BinGrid, BinnedScores, DeviationSummary, ScoreEstimate, TerminalSample};
pub use model::{
    EulerMap, GaussianKernel, InitialDistribution, Lorenz96, Matrix, NoiseKernel, ScalarMap, SeparableSde, StepMap,
    SystemModel, Vector,
};
pub use oracle::GridDensity;
pub use paths::{PathRecord, SimulationPlan};
pub use pipeline::{Estimator, RunOutcome};
pub use schedules::Schedule;
pub use sde_scores::{DriveOptions, DriveOutcome, SdeStepper};

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}
