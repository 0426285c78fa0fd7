//! Simulate paths, run one estimator per path, and keep terminal samples.
//!
//! Paths are independent and evaluated in parallel; results are gathered in
//! path-id order so downstream sums are identical for any thread count.

use rayon::prelude::*;

use crate::discrete_scores::{
    nstep_divergence_trace, nstep_divker_forward_trace, nstep_divker_noh0_trace, nstep_kernel_score, GeometryMode,
    RecursionOptions, DEFAULT_COVECTOR_CAP, DEFAULT_DET_FLOOR,
};
use crate::error::{Result, ScoreError};
use crate::estimate::TerminalSample;
use crate::model::{EulerMap, GaussianKernel, InitialDistribution, SystemModel, Vector};
use crate::paths::{simulate_sde_path, PathRecord, SimulationPlan};
use crate::schedules::Schedule;
use crate::sde_scores::{drive_covector, sde_kernel_score, DriveOptions, SdeStepper};

/// Estimator applied to every path. `Sde*` variants use the continuous-limit
/// covector SDEs; `NStep*` variants run the exact chain recursions on the
/// Euler embedding `f = x + F Δt` with Gaussian kernel of variance `Δt`.
#[derive(Debug, Clone)]
pub enum Estimator {
    SdeKernel { beta: Schedule },
    SdeDivergence,
    SdeDivKer { alpha: Schedule },
    SdeDivKerNoH0,
    NStepKernel { beta: Schedule },
    NStepDivergence,
    NStepDivKer { alpha: Schedule },
    NStepDivKerNoH0,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::SdeKernel { .. } => "sde-kernel",
            Estimator::SdeDivergence => "sde-divergence",
            Estimator::SdeDivKer { .. } => "sde-divker",
            Estimator::SdeDivKerNoH0 => "sde-divker-noh0",
            Estimator::NStepKernel { .. } => "nstep-kernel",
            Estimator::NStepDivergence => "nstep-divergence",
            Estimator::NStepDivKer { .. } => "nstep-divker",
            Estimator::NStepDivKerNoH0 => "nstep-divker-noh0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub cap: f64,
    pub det_floor: f64,
    pub allow_negative_alpha: bool,
    pub geometry: GeometryMode,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_COVECTOR_CAP,
            det_floor: DEFAULT_DET_FLOOR,
            allow_negative_alpha: false,
            geometry: GeometryMode::Auto,
            threads: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub estimator: &'static str,
    pub n_paths: usize,
    /// Finite covectors, in path-id order.
    pub samples: Vec<TerminalSample>,
    /// Paths whose covector exceeded the cap.
    pub n_capped: usize,
    /// Paths whose state became non-finite.
    pub n_divergent: usize,
    /// Paths hitting a singular step Jacobian.
    pub n_singular: usize,
    /// Largest `|ν_n|` seen on any kept path.
    pub max_abs_nu: f64,
}

enum PathResult {
    Kept(TerminalSample, f64),
    Capped,
    Divergent,
    Singular,
}

fn classify(err: ScoreError) -> Result<PathResult> {
    match err {
        ScoreError::CovectorExplosion { .. } => Ok(PathResult::Capped),
        ScoreError::DivergentPath { .. } => Ok(PathResult::Divergent),
        ScoreError::SingularStep { .. } => Ok(PathResult::Singular),
        other => Err(other),
    }
}

fn path_covector(
    path: &PathRecord,
    model: &dyn SystemModel,
    init: &InitialDistribution,
    estimator: &Estimator,
    opts: &RunOptions,
) -> Result<(Vector, f64)> {
    let drive = DriveOptions { cap: opts.cap, allow_negative_alpha: opts.allow_negative_alpha };
    let recursion = RecursionOptions {
        geometry: opts.geometry,
        cap: opts.cap,
        det_floor: opts.det_floor,
        allow_negative_alpha: opts.allow_negative_alpha,
    };
    let driven =
        |stepper: SdeStepper| drive_covector(path, model, &stepper, init, &drive).map(|out| (out.nu, out.max_norm));
    let map = EulerMap::new(model, path.dt);
    let mut max_norm = 0.0f64;
    let mut track = |_: usize, nu: &Vector| max_norm = max_norm.max(nu.norm());
    let nu = match estimator {
        Estimator::SdeKernel { beta } => sde_kernel_score(path, model, beta, init)?,
        Estimator::SdeDivergence => return driven(SdeStepper::Divergence),
        Estimator::SdeDivKer { alpha } => return driven(SdeStepper::DivKer(alpha.clone())),
        Estimator::SdeDivKerNoH0 => return driven(SdeStepper::DivKerNoH0),
        Estimator::NStepKernel { beta } => {
            let kernel = GaussianKernel::brownian(model.dim(), path.dt)?;
            nstep_kernel_score(path, &map, &kernel, beta, init)?
        }
        Estimator::NStepDivergence => nstep_divergence_trace(path, &map, init, &recursion, &mut track)?,
        Estimator::NStepDivKer { alpha } => {
            let kernel = GaussianKernel::brownian(model.dim(), path.dt)?;
            nstep_divker_forward_trace(path, &map, &kernel, alpha, init, &recursion, &mut track)?
        }
        Estimator::NStepDivKerNoH0 => {
            let kernel = GaussianKernel::brownian(model.dim(), path.dt)?;
            nstep_divker_noh0_trace(path, &map, &kernel, &recursion, &mut track)?
        }
    };
    let norm = nu.norm();
    if !(norm <= opts.cap) {
        return Err(ScoreError::CovectorExplosion { step: path.steps(), norm });
    }
    Ok((nu, max_norm.max(norm)))
}

fn run_path(
    model: &dyn SystemModel,
    init: &InitialDistribution,
    plan: &SimulationPlan,
    estimator: &Estimator,
    opts: &RunOptions,
    path_id: u64,
) -> Result<PathResult> {
    let path = match simulate_sde_path(model, init, plan, path_id) {
        Ok(p) => p,
        Err(e) => return classify(e),
    };
    match path_covector(&path, model, init, estimator, opts) {
        Ok((nu, max_norm)) => {
            let terminal = path.states.last().expect("paths have a terminal state").clone();
            Ok(PathResult::Kept(TerminalSample { path_id, terminal, nu }, max_norm))
        }
        Err(e) => classify(e),
    }
}

/// Runs `estimator` on paths `0..plan.n_paths`.
///
/// Capped, divergent and singular paths are counted and dropped; any other
/// error aborts the run.
pub fn run_estimator(
    model: &dyn SystemModel,
    init: &InitialDistribution,
    plan: &SimulationPlan,
    estimator: &Estimator,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    plan.validate()?;
    crate::model::check_dim(model.dim(), init.dim())?;
    let work = || -> Result<Vec<PathResult>> {
        (0..plan.n_paths as u64).into_par_iter().map(|id| run_path(model, init, plan, estimator, opts, id)).collect()
    };
    let results = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ScoreError::InvalidPlan(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut out = RunOutcome {
        estimator: estimator.name(),
        n_paths: plan.n_paths,
        samples: Vec::with_capacity(results.len()),
        n_capped: 0,
        n_divergent: 0,
        n_singular: 0,
        max_abs_nu: 0.0,
    };
    for r in results {
        match r {
            PathResult::Kept(s, m) => {
                out.max_abs_nu = out.max_abs_nu.max(m);
                out.samples.push(s);
            }
            PathResult::Capped => out.n_capped += 1,
            PathResult::Divergent => out.n_divergent += 1,
            PathResult::Singular => out.n_singular += 1,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SeparableSde;
    use crate::schedules::beta_linear;

    #[test]
    fn outcome_is_thread_count_independent() {
        let model = SeparableSde::linear_ou(1, 1.0, 1.0);
        let init = InitialDistribution::standard_normal(1);
        let plan = SimulationPlan::from_step_size(0.5, 0.01, 64, 3).unwrap();
        let est = Estimator::SdeKernel { beta: beta_linear(0.5).unwrap() };
        let one =
            run_estimator(&model, &init, &plan, &est, &RunOptions { threads: Some(1), ..Default::default() }).unwrap();
        let two =
            run_estimator(&model, &init, &plan, &est, &RunOptions { threads: Some(2), ..Default::default() }).unwrap();
        assert_eq!(one.samples, two.samples);
        assert_eq!(one.samples.len(), 64);
        assert!(one.samples.windows(2).all(|w| w[0].path_id < w[1].path_id));
    }

    #[test]
    fn capped_paths_are_counted() {
        let model = SeparableSde::linear_ou(1, 1.0, 1.0);
        let init = InitialDistribution::standard_normal(1);
        let plan = SimulationPlan::from_step_size(3.0, 0.01, 20, 3).unwrap();
        let opts = RunOptions { cap: 1.0, ..Default::default() };
        let out = run_estimator(&model, &init, &plan, &Estimator::SdeDivergence, &opts).unwrap();
        assert_eq!(out.samples.len() + out.n_capped, 20);
        assert!(out.n_capped > 0);
        assert!(out.max_abs_nu <= 1.0);
    }

    #[test]
    fn missing_initial_score_aborts() {
        let model = SeparableSde::linear_ou(1, 1.0, 1.0);
        let init = InitialDistribution::PointMass(Vector::zeros(1));
        let plan = SimulationPlan::from_step_size(0.1, 0.01, 4, 3).unwrap();
        let res = run_estimator(&model, &init, &plan, &Estimator::NStepDivergence, &RunOptions::default());
        assert!(matches!(res, Err(ScoreError::MissingInitialScore { .. })));
        let ok = run_estimator(&model, &init, &plan, &Estimator::NStepDivKerNoH0, &RunOptions::default()).unwrap();
        assert_eq!(ok.samples.len(), 4);
    }
}
