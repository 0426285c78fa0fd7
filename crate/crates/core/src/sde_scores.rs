//! Score estimators for Euler-discretized SDEs `dx = F dt + σ dB`.
//!
//! The step geometry of the chain is replaced by its small-`Δt` expansion:
//!
//! - `div g_* ≈ ∇div F Δt + ∇²σ ΔB - ∇²σ∇σ Δt`
//! - `g^{*-1} ν ≈ (I - ∇F^T Δt - ∇σ ΔB^T + ∇σ∇σ^T Δt) ν`
//!
//! which turns the recursions into Euler steps of covector SDEs driven by
//! the same increments `ΔB` as the state path.

use crate::error::{Result, ScoreError};
use crate::model::{checked_diffusion, InitialDistribution, SystemModel, Vector};
use crate::paths::PathRecord;
use crate::schedules::{Schedule, ScheduleKind};

/// `∇div F Δt + ∇²σ ΔB - ∇²σ∇σ Δt`
pub fn approx_div_jacobian(model: &dyn SystemModel, x: &Vector, db: &Vector, dt: f64) -> Vector {
    let mut out = model.drift_divergence_gradient(x) * dt;
    if !model.is_additive() {
        let grad = model.diffusion_gradient(x);
        out += model.diffusion_hessian_apply(x, db);
        out.axpy(-dt, &model.diffusion_hessian_apply(x, &grad), 1.0);
    }
    out
}

/// `(I - ∇F^T Δt - ∇σ ΔB^T + ∇σ∇σ^T Δt) ν`
pub fn approx_pullback_inverse_apply(model: &dyn SystemModel, x: &Vector, db: &Vector, dt: f64, nu: &Vector) -> Vector {
    let mut out = nu.clone();
    out.axpy(-dt, &model.drift_jacobian_transpose_apply(x, nu), 1.0);
    if !model.is_additive() {
        let grad = model.diffusion_gradient(x);
        out.axpy(grad.dot(nu) * dt - db.dot(nu), &grad, 1.0);
    }
    out
}

/// Coefficients of the general covector step
///
/// `Δν = ((∇σ∇σ^T - ∇F^T - α)ν + w(∇²σ∇σ + ∇σΔσ - ∇div F))Δt - ∇σ(ν·ΔB) - w∇²σ ΔB - c ΔB`
#[derive(Debug, Clone, Copy)]
struct StepCoefficients {
    damping: f64,
    source_weight: f64,
    kernel_weight: f64,
}

fn covector_step(
    model: &dyn SystemModel,
    x: &Vector,
    nu: &Vector,
    db: &Vector,
    dt: f64,
    k: StepCoefficients,
) -> Vector {
    let mut out = nu.clone();
    out.axpy(-dt, &model.drift_jacobian_transpose_apply(x, nu), 1.0);
    if k.damping != 0.0 {
        out.axpy(-k.damping * dt, nu, 1.0);
    }
    if k.source_weight != 0.0 {
        out.axpy(-k.source_weight * dt, &model.drift_divergence_gradient(x), 1.0);
    }
    if !model.is_additive() {
        let grad = model.diffusion_gradient(x);
        out.axpy(grad.dot(nu) * dt - nu.dot(db), &grad, 1.0);
        if k.source_weight != 0.0 {
            let w = k.source_weight;
            out.axpy(w * dt, &model.diffusion_hessian_apply(x, &grad), 1.0);
            out.axpy(w * dt * model.diffusion_laplacian(x), &grad, 1.0);
            out.axpy(-w, &model.diffusion_hessian_apply(x, db), 1.0);
        }
    }
    if k.kernel_weight != 0.0 {
        out.axpy(-k.kernel_weight, db, 1.0);
    }
    out
}

/// Source-free flow `dν = (∇σ∇σ^T - ∇F^T) ν dt - ∇σ (ν·dB)`.
pub fn homogeneous_step(model: &dyn SystemModel, x: &Vector, nu: &Vector, db: &Vector, dt: f64) -> Vector {
    let k = StepCoefficients { damping: 0.0, source_weight: 0.0, kernel_weight: 0.0 };
    covector_step(model, x, nu, db, dt, k)
}

/// `Δν = ((∇σ∇σ^T - ∇F^T)ν - ∇div F + ∇²σ∇σ + ∇σΔσ) Δt - (∇σ ν^T + ∇²σ) ΔB`
pub fn sde_divergence_step(model: &dyn SystemModel, x: &Vector, nu: &Vector, db: &Vector, dt: f64) -> Vector {
    let k = StepCoefficients { damping: 0.0, source_weight: 1.0, kernel_weight: 0.0 };
    covector_step(model, x, nu, db, dt, k)
}

/// Divergence step tempered by `α_{n+1}`: adds `-α ν Δt - (α/σ) ΔB`.
///
/// `alpha_next = 0` gives [`sde_divergence_step`] bit for bit.
pub fn sde_divker_step(
    model: &dyn SystemModel,
    x: &Vector,
    nu: &Vector,
    db: &Vector,
    dt: f64,
    alpha_next: f64,
) -> Result<Vector> {
    let kernel_weight = if alpha_next != 0.0 { alpha_next / checked_diffusion(model.diffusion(x), x)? } else { 0.0 };
    let k = StepCoefficients { damping: alpha_next, source_weight: 1.0, kernel_weight };
    Ok(covector_step(model, x, nu, db, dt, k))
}

/// Step of the estimator that needs no initial score: sources weighted by
/// `t/T`, kernel term `ΔB / (Tσ)`, started from `ν_0 = 0`.
pub fn sde_divker_noh0_step(
    model: &dyn SystemModel,
    x: &Vector,
    nu: &Vector,
    db: &Vector,
    dt: f64,
    t_over_t: f64,
    total_time: f64,
) -> Result<Vector> {
    let sigma = checked_diffusion(model.diffusion(x), x)?;
    let k = StepCoefficients { damping: 0.0, source_weight: t_over_t, kernel_weight: 1.0 / (total_time * sigma) };
    Ok(covector_step(model, x, nu, db, dt, k))
}

/// Kernel-differentiation estimator for additive noise,
/// `β_0 ∇log h_0(x_0) + Σ_n (β_n ∇F^T(x_n) ΔB_n - β'_n ΔB_n) / σ`.
pub fn sde_kernel_score(
    path: &PathRecord,
    model: &dyn SystemModel,
    beta: &Schedule,
    init: &InitialDistribution,
) -> Result<Vector> {
    const NAME: &str = "sde-kernel";
    crate::model::check_dim(model.dim(), path.dim())?;
    if !model.is_additive() {
        return Err(ScoreError::UnsupportedNoise { estimator: NAME });
    }
    if matches!(beta.kind(), ScheduleKind::StateDependent(_)) {
        return Err(ScoreError::Schedule("beta must be predictable; it may not read the current state".into()));
    }
    let dt = path.dt;
    let steps = path.steps();
    beta.validate_terminal_one(steps, dt, path.terminal())?;
    let beta0 = beta.value_at(0, 0.0, path.initial());
    let mut nu = if beta0 != 0.0 {
        init.score(path.initial()).ok_or(ScoreError::MissingInitialScore { estimator: NAME })? * beta0
    } else {
        Vector::zeros(path.dim())
    };
    let x0 = path.initial();
    let sigma = checked_diffusion(model.diffusion(x0), x0)?;
    for n in 0..steps {
        let t = n as f64 * dt;
        let x = &path.states[n];
        let db = &path.increments[n];
        let b = beta.value_at(n, t, x);
        let db_rate = beta
            .derivative_at(t)
            .ok_or_else(|| ScoreError::Schedule("sde kernel score needs an analytic beta derivative".into()))?;
        if b != 0.0 {
            nu.axpy(b / sigma, &model.drift_jacobian_transpose_apply(x, db), 1.0);
        }
        nu.axpy(-db_rate / sigma, db, 1.0);
    }
    Ok(nu)
}

/// Which covector SDE [`drive_covector`] integrates.
#[derive(Debug, Clone)]
pub enum SdeStepper {
    /// Pure divergence; starts from `∇log h_0(x_0)`.
    Divergence,
    /// Divergence-kernel with `α_{n+1}` read at step `n + 1` and state `x_{n+1}`;
    /// starts from `∇log h_0(x_0)`.
    DivKer(Schedule),
    /// No initial score; starts from `ν_0 = 0`.
    DivKerNoH0,
}

impl SdeStepper {
    pub fn name(&self) -> &'static str {
        match self {
            SdeStepper::Divergence => "sde-divergence",
            SdeStepper::DivKer(_) => "sde-divker",
            SdeStepper::DivKerNoH0 => "sde-divker-noh0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveOptions {
    pub cap: f64,
    pub allow_negative_alpha: bool,
}

impl Default for DriveOptions {
    fn default() -> Self {
        Self { cap: crate::discrete_scores::DEFAULT_COVECTOR_CAP, allow_negative_alpha: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveOutcome {
    pub nu: Vector,
    /// `max_n |ν_n|` along the path, including `ν_0`.
    pub max_norm: f64,
}

/// Folds `stepper` along `path` from its prescribed initial covector.
pub fn drive_covector(
    path: &PathRecord,
    model: &dyn SystemModel,
    stepper: &SdeStepper,
    init: &InitialDistribution,
    opts: &DriveOptions,
) -> Result<DriveOutcome> {
    drive_covector_trace(path, model, stepper, init, opts, |_, _| {})
}

pub fn drive_covector_trace(
    path: &PathRecord,
    model: &dyn SystemModel,
    stepper: &SdeStepper,
    init: &InitialDistribution,
    opts: &DriveOptions,
    mut observe: impl FnMut(usize, &Vector),
) -> Result<DriveOutcome> {
    crate::model::check_dim(model.dim(), path.dim())?;
    let dt = path.dt;
    let steps = path.steps();
    let total_time = path.total_time();
    let mut nu = match stepper {
        SdeStepper::DivKerNoH0 => Vector::zeros(path.dim()),
        other => init.score(path.initial()).ok_or(ScoreError::MissingInitialScore { estimator: other.name() })?,
    };
    let mut max_norm = nu.norm();
    observe(0, &nu);
    for n in 0..steps {
        let x = &path.states[n];
        let db = &path.increments[n];
        nu = match stepper {
            SdeStepper::Divergence => sde_divergence_step(model, x, &nu, db, dt),
            SdeStepper::DivKer(alpha) => {
                let a = alpha.value_at(n + 1, (n + 1) as f64 * dt, &path.states[n + 1]);
                if !a.is_finite() || (a < 0.0 && !opts.allow_negative_alpha) {
                    return Err(ScoreError::Schedule(format!("alpha at step {} is {a}", n + 1)));
                }
                sde_divker_step(model, x, &nu, db, dt, a)?
            }
            SdeStepper::DivKerNoH0 => sde_divker_noh0_step(model, x, &nu, db, dt, n as f64 / steps as f64, total_time)?,
        };
        let norm = nu.norm();
        if !(norm <= opts.cap) {
            return Err(ScoreError::CovectorExplosion { step: n + 1, norm });
        }
        max_norm = max_norm.max(norm);
        observe(n + 1, &nu);
    }
    Ok(DriveOutcome { nu, max_norm })
}
