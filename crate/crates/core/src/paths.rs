//! Euler–Maruyama and general discrete-chain path simulation.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};
use crate::model::{
    checked_diffusion, InitialDistribution, NoiseKernel, PositivityCheck, StepMap, SystemModel, Vector,
};
use crate::rng::PathStream;

/// Time grid and Monte-Carlo budget of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub total_time: f64,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimulationPlan {
    pub fn new(total_time: f64, steps: usize, n_paths: usize, seed: u64) -> Result<Self> {
        let plan = Self { total_time, steps, n_paths, seed };
        plan.validate()?;
        Ok(plan)
    }

    /// Plan with `N = round(T / Δt)`; fails unless `N Δt = T` to 1e-12.
    pub fn from_step_size(total_time: f64, dt: f64, n_paths: usize, seed: u64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ScoreError::InvalidPlan(format!("step size must be > 0, got {dt}")));
        }
        if !(total_time >= 0.0 && total_time.is_finite()) {
            return Err(ScoreError::InvalidPlan(format!("total time must be >= 0, got {total_time}")));
        }
        let steps = (total_time / dt).round() as usize;
        let plan = Self::new(total_time, steps, n_paths, seed)?;
        if (plan.dt() - dt).abs() > 1e-12 * dt {
            return Err(ScoreError::InvalidPlan(format!("T = {total_time} is not an integer multiple of dt = {dt}")));
        }
        Ok(plan)
    }

    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.total_time / self.steps as f64
        }
    }

    pub fn time_at(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_time >= 0.0 && self.total_time.is_finite()) {
            return Err(ScoreError::InvalidPlan(format!("total time must be >= 0, got {}", self.total_time)));
        }
        if self.steps == 0 && self.total_time > 0.0 {
            return Err(ScoreError::InvalidPlan("a positive horizon needs at least one step".into()));
        }
        if self.n_paths == 0 {
            return Err(ScoreError::InvalidPlan("need at least one path".into()));
        }
        if self.steps > 0 {
            let err = (self.steps as f64 * self.dt() - self.total_time).abs();
            if err > 1e-12 * self.total_time {
                return Err(ScoreError::InvalidPlan(format!("N dt differs from T by {err:e}")));
            }
        }
        Ok(())
    }
}

/// One realized trajectory `x_0..x_N` with its noise increments `b_0..b_{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// Step size; 1 for chains without an underlying time grid.
    pub dt: f64,
    pub states: Vec<Vector>,
    pub increments: Vec<Vector>,
    pub path_id: u64,
}

impl PathRecord {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn initial(&self) -> &Vector {
        &self.states[0]
    }

    pub fn terminal(&self) -> &Vector {
        self.states.last().expect("a path has at least its initial state")
    }

    pub fn total_time(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    /// Replays the increments through `x + F(x) Δt + σ(x) ΔB` and returns the
    /// largest deviation from the stored states, in ulps of the stored value.
    pub fn max_replay_ulps(&self, model: &dyn SystemModel) -> u64 {
        let mut worst = 0;
        for n in 0..self.steps() {
            let x = &self.states[n];
            let next = euler_step(model, x, &self.increments[n], self.dt, model.diffusion(x));
            for (a, b) in next.iter().zip(self.states[n + 1].iter()) {
                worst = worst.max(ulps_between(*a, *b));
            }
        }
        worst
    }
}

fn ulps_between(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    let key = |v: f64| {
        let bits = v.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

#[inline]
fn euler_step(model: &dyn SystemModel, x: &Vector, db: &Vector, dt: f64, sigma: f64) -> Vector {
    let mut next = model.drift(x) * dt;
    next += x;
    next.axpy(sigma, db, 1.0);
    next
}

/// Euler–Maruyama path of `dx = F dt + σ dB` with increments drawn from the
/// counter-based stream `(plan.seed, path_id, n)`.
pub fn simulate_sde_path(
    model: &dyn SystemModel,
    init: &InitialDistribution,
    plan: &SimulationPlan,
    path_id: u64,
) -> Result<PathRecord> {
    simulate_sde_path_checked(model, init, plan, path_id, PositivityCheck::default())
}

pub fn simulate_sde_path_checked(
    model: &dyn SystemModel,
    init: &InitialDistribution,
    plan: &SimulationPlan,
    path_id: u64,
    positivity: PositivityCheck,
) -> Result<PathRecord> {
    plan.validate()?;
    if path_id >= plan.n_paths as u64 {
        return Err(ScoreError::InvalidPlan(format!("path id {path_id} out of range for {} paths", plan.n_paths)));
    }
    crate::model::check_dim(model.dim(), init.dim())?;
    let m = model.dim();
    let dt = plan.dt();
    let kernel = (plan.steps > 0).then(|| crate::model::GaussianKernel::brownian(m, dt)).transpose()?;
    let mut stream = PathStream::new(plan.seed, path_id);
    let x0 = init.sample(stream.initial());

    let mut states = Vec::with_capacity(plan.steps + 1);
    let mut increments = Vec::with_capacity(plan.steps);
    states.push(x0);
    for n in 0..plan.steps {
        let x = &states[n];
        let mut sigma = model.diffusion(x);
        if positivity.applies_at(n) {
            sigma = checked_diffusion(sigma, x)?;
        }
        let db = kernel.as_ref().expect("kernel exists when steps > 0").sample(stream.step(n));
        let next = euler_step(model, x, &db, dt, sigma);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::DivergentPath { path_id, step: n });
        }
        increments.push(db);
        states.push(next);
    }
    Ok(PathRecord { dt, states, increments, path_id })
}

/// General chain `x_{n+1} = f(x_n) + σ(x_n) b_n` with kernel draws `b_n`.
pub fn simulate_discrete_path(
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    init: &InitialDistribution,
    steps: usize,
    seed: u64,
    path_id: u64,
) -> Result<PathRecord> {
    if steps == 0 {
        return Err(ScoreError::InvalidPlan("a discrete chain needs N >= 1".into()));
    }
    crate::model::check_dim(map.dim(), init.dim())?;
    crate::model::check_dim(map.dim(), kernel.dim())?;
    let mut stream = PathStream::new(seed, path_id);
    let mut states = Vec::with_capacity(steps + 1);
    let mut increments = Vec::with_capacity(steps);
    states.push(init.sample(stream.initial()));
    for n in 0..steps {
        let x = &states[n];
        let sigma = checked_diffusion(map.diffusion(x), x)?;
        let b = kernel.sample(stream.step(n));
        let mut next = map.map(x);
        next.axpy(sigma, &b, 1.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::DivergentPath { path_id, step: n });
        }
        increments.push(b);
        states.push(next);
    }
    Ok(PathRecord { dt: 1.0, states, increments, path_id })
}

/// Writes `path_id, n, x^1..x^M, b^1..b^M` rows with 17 significant digits.
/// The terminal row of each path leaves the increment columns empty.
pub fn write_path_dump<W: Write>(mut out: W, paths: &[PathRecord]) -> io::Result<()> {
    let Some(first) = paths.first() else {
        return Ok(());
    };
    let m = first.dim();
    let mut header = vec!["path_id".to_string(), "n".to_string()];
    header.extend((1..=m).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("b{i}")));
    writeln!(out, "{}", header.join(","))?;
    for path in paths {
        for (n, x) in path.states.iter().enumerate() {
            write!(out, "{},{}", path.path_id, n)?;
            for v in x.iter() {
                write!(out, ",{}", crate::fmt_full(*v))?;
            }
            match path.increments.get(n) {
                Some(b) => {
                    for v in b.iter() {
                        write!(out, ",{}", crate::fmt_full(*v))?;
                    }
                }
                None => {
                    for _ in 0..m {
                        write!(out, ",")?;
                    }
                }
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
