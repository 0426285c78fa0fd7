//! Deterministic weight schedules: `α` shifts divergence weight onto the
//! kernel term, `β` spreads kernel differentiation over the steps.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, ScoreError};
use crate::model::{InitialDistribution, SystemModel, Vector};
use crate::paths::{simulate_sde_path, SimulationPlan};
use crate::sde_scores::homogeneous_step;

type StateFn = Arc<dyn Fn(usize, f64, &Vector) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ScheduleKind {
    Constant(f64),
    /// `t / T`
    LinearInTime {
        total_time: f64,
    },
    /// `1 / n` for `n >= 1`
    ReciprocalStep,
    /// `1 / t` for `t > 0`
    ReciprocalTime,
    /// Value per step index.
    Tabulated(Vec<f64>),
    /// Reads the current state; must only depend on `(n, t, x_n)`.
    StateDependent(StateFn),
}

impl fmt::Debug for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::LinearInTime { total_time } => write!(f, "LinearInTime(T={total_time})"),
            Self::ReciprocalStep => write!(f, "ReciprocalStep"),
            Self::ReciprocalTime => write!(f, "ReciprocalTime"),
            Self::Tabulated(v) => write!(f, "Tabulated(len={})", v.len()),
            Self::StateDependent(_) => write!(f, "StateDependent"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Schedule {
    kind: ScheduleKind,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self { kind: ScheduleKind::Constant(value) }
    }

    pub fn reciprocal_step() -> Self {
        Self { kind: ScheduleKind::ReciprocalStep }
    }

    pub fn reciprocal_time() -> Self {
        Self { kind: ScheduleKind::ReciprocalTime }
    }

    pub fn tabulated(values: Vec<f64>) -> Self {
        Self { kind: ScheduleKind::Tabulated(values) }
    }

    pub fn state_dependent(f: impl Fn(usize, f64, &Vector) -> f64 + Send + Sync + 'static) -> Self {
        Self { kind: ScheduleKind::StateDependent(Arc::new(f)) }
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// Value at step `n`, time `t`, state `x`.
    ///
    /// Step-indexed schedules read `n`; time-indexed ones read `t`. Outside
    /// their domain (`n = 0` for `1/n`, `t = 0` for `1/t`, beyond the table)
    /// the value is `+∞` or `NaN`; the recursions never evaluate there.
    pub fn value_at(&self, n: usize, t: f64, x: &Vector) -> f64 {
        match &self.kind {
            ScheduleKind::Constant(c) => *c,
            ScheduleKind::LinearInTime { total_time } => t / total_time,
            ScheduleKind::ReciprocalStep => 1.0 / n as f64,
            ScheduleKind::ReciprocalTime => 1.0 / t,
            ScheduleKind::Tabulated(v) => v.get(n).copied().unwrap_or(f64::NAN),
            ScheduleKind::StateDependent(f) => f(n, t, x),
        }
    }

    /// `β'(t)` where known in closed form.
    pub fn derivative_at(&self, _t: f64) -> Option<f64> {
        match &self.kind {
            ScheduleKind::Constant(_) => Some(0.0),
            ScheduleKind::LinearInTime { total_time } => Some(1.0 / total_time),
            _ => None,
        }
    }

    /// Checks `β_N = 1` on the grid `t_n = n Δt`.
    pub fn validate_terminal_one(&self, steps: usize, dt: f64, x_terminal: &Vector) -> Result<()> {
        let v = self.value_at(steps, steps as f64 * dt, x_terminal);
        if (v - 1.0).abs() <= 1e-12 {
            Ok(())
        } else {
            Err(ScoreError::Schedule(format!("beta must equal 1 at the final step, got {v}")))
        }
    }
}

/// `β_t = t / T` with `β' = 1/T`.
pub fn beta_linear(total_time: f64) -> Result<Schedule> {
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(ScoreError::Schedule(format!("T must be > 0, got {total_time}")));
    }
    Ok(Schedule { kind: ScheduleKind::LinearInTime { total_time } })
}

/// Safety factor applied to the probed growth rate.
pub const SAFE_ALPHA_FACTOR: f64 = 1.5;
const MAX_PROBE_DIRECTIONS: usize = 16;

/// Heuristic constant `α` above the growth rate `(1/T) log |D^T|` of the
/// homogeneous covector flow
/// `dν = (∇σ∇σ^T - ∇F^T) ν dt - ∇σ (ν·dB)`.
///
/// Integrates the flow from the first `min(M, 16)` unit covectors along
/// `n_probe_paths` simulated paths and returns `1.5 · max(0, max rate)`.
/// The result is an empirical estimate, not a bound.
pub fn safe_alpha_estimate(
    model: &dyn SystemModel,
    init: &InitialDistribution,
    plan: &SimulationPlan,
    n_probe_paths: usize,
    seed: u64,
) -> Result<f64> {
    if n_probe_paths == 0 {
        return Err(ScoreError::InvalidPlan("need at least one probe path".into()));
    }
    if plan.total_time <= 0.0 {
        return Ok(0.0);
    }
    let probe_plan = SimulationPlan { n_paths: n_probe_paths, seed, ..*plan };
    let m = model.dim();
    let dt = probe_plan.dt();
    let mut max_rate = f64::NEG_INFINITY;
    for path_id in 0..n_probe_paths as u64 {
        let path = simulate_sde_path(model, init, &probe_plan, path_id)?;
        for dir in 0..m.min(MAX_PROBE_DIRECTIONS) {
            let mut nu = crate::model::unit(m, dir);
            // Renormalize each step so long horizons cannot overflow.
            let mut log_growth = 0.0;
            for n in 0..path.steps() {
                nu = homogeneous_step(model, &path.states[n], &nu, &path.increments[n], dt);
                let norm = nu.norm();
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(ScoreError::DivergentPath { path_id, step: n });
                }
                log_growth += norm.ln();
                nu /= norm;
            }
            max_rate = max_rate.max(log_growth / plan.total_time);
        }
    }
    Ok(SAFE_ALPHA_FACTOR * max_rate.max(0.0))
}
