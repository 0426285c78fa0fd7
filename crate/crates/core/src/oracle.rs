//! One-dimensional ground truth: density propagation by trapezoid
//! quadrature, the Gaussian OU score, and quadrature conditional
//! expectations for one-step estimators.

use std::io::{self, Write};

use crate::error::{Result, ScoreError};
use crate::fmt_full;
use crate::model::{checked_diffusion, NoiseKernel, StepMap, Vector};

/// Density values on the uniform grid `lo + i · step`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub lo: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

const DENSITY_FLOOR: f64 = 1e-300;

impl GridDensity {
    pub fn from_fn(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        if !(hi > lo && step > 0.0) {
            return Err(ScoreError::Oracle(format!("bad grid [{lo}, {hi}] with step {step}")));
        }
        let n = ((hi - lo) / step).round() as usize + 1;
        if n < 5 {
            return Err(ScoreError::Oracle("grid needs at least 5 nodes".into()));
        }
        let values = (0..n).map(|i| f(lo + i as f64 * step)).collect();
        Ok(Self { lo, step, values })
    }

    pub fn gaussian(lo: f64, hi: f64, step: f64, mean: f64, variance: f64) -> Result<Self> {
        let norm = (2.0 * std::f64::consts::PI * variance).sqrt();
        Self::from_fn(lo, hi, step, |x| (-(x - mean).powi(2) / (2.0 * variance)).exp() / norm)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hi(&self) -> f64 {
        self.node(self.len() - 1)
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    fn trapezoid_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.len() {
            0.5 * self.step
        } else {
            self.step
        }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().enumerate().map(|(i, v)| self.trapezoid_weight(i) * v).sum()
    }

    fn empty_like(&self) -> Self {
        Self { lo: self.lo, step: self.step, values: vec![0.0; self.len()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    /// Largest mass allowed to leave the grid in one step.
    pub boundary_tol: f64,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self { boundary_tol: 1e-8 }
    }
}

fn transition(map: &dyn StepMap, kernel: &dyn NoiseKernel, y: f64, x: f64) -> Result<f64> {
    let yv = Vector::from_element(1, y);
    let sigma = checked_diffusion(map.diffusion(&yv), &yv)?;
    let f = map.map(&yv)[0];
    Ok(kernel.density(&[(x - f) / sigma]) / sigma)
}

fn check_one_dimensional(map: &dyn StepMap, kernel: &dyn NoiseKernel) -> Result<()> {
    if map.dim() != 1 || kernel.dim() != 1 {
        return Err(ScoreError::Oracle("density propagation is one-dimensional".into()));
    }
    Ok(())
}

/// Adds `weight · p(y, ·)` to `out`, restricted to the kernel's effective
/// support when it has one.
fn scatter_source(
    out: &mut GridDensity,
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    y: f64,
    weight: f64,
) -> Result<()> {
    let yv = Vector::from_element(1, y);
    let sigma = checked_diffusion(map.diffusion(&yv), &yv)?;
    let f = map.map(&yv)[0];
    let (first, last) = match kernel.effective_radius() {
        Some(r) => {
            let lo = ((f - r * sigma - out.lo) / out.step).floor().max(0.0);
            let hi = ((f + r * sigma - out.lo) / out.step).ceil().min((out.len() - 1) as f64);
            if lo > hi {
                return Ok(());
            }
            (lo as usize, hi as usize)
        }
        None => (0, out.len() - 1),
    };
    let scale = weight / sigma;
    for i in first..=last {
        let x = out.node(i);
        out.values[i] += scale * kernel.density(&[(x - f) / sigma]);
    }
    Ok(())
}

fn finish_step(mut next: GridDensity, mass_before: f64, step: usize, opts: &PropagationOptions) -> Result<GridDensity> {
    for v in next.values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let leak = mass_before - next.mass();
    if leak > opts.boundary_tol {
        return Err(ScoreError::Oracle(format!(
            "step {step} lost {leak:.3e} of mass through the grid boundary; widen the grid"
        )));
    }
    Ok(next)
}

/// Iterates `h_{n+1}(x) = ∫ h_n(y) p(y, x) dy` by the trapezoid rule.
pub fn propagate_density(
    h0: &GridDensity,
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    n_steps: usize,
    opts: &PropagationOptions,
) -> Result<GridDensity> {
    check_one_dimensional(map, kernel)?;
    let mut h = h0.clone();
    for step in 0..n_steps {
        let mut next = h.empty_like();
        for j in 0..h.len() {
            let w = h.trapezoid_weight(j) * h.values[j];
            if w > 0.0 {
                scatter_source(&mut next, map, kernel, h.node(j), w)?;
            }
        }
        let mass = h.mass();
        h = finish_step(next, mass, step, opts)?;
    }
    Ok(h)
}

/// Propagates a point mass at `x0`: the first step evaluates `p(x0, ·)`
/// on the grid directly, later steps use [`propagate_density`].
#[allow(clippy::too_many_arguments)]
pub fn propagate_point_mass(
    x0: f64,
    lo: f64,
    hi: f64,
    step: f64,
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    n_steps: usize,
    opts: &PropagationOptions,
) -> Result<GridDensity> {
    check_one_dimensional(map, kernel)?;
    if n_steps == 0 {
        return Err(ScoreError::Oracle("a point mass has no density before the first step".into()));
    }
    let mut h1 = GridDensity::from_fn(lo, hi, step, |_| 0.0)?;
    scatter_source(&mut h1, map, kernel, x0, 1.0)?;
    let h1 = finish_step(h1, 1.0, 0, opts)?;
    propagate_density(&h1, map, kernel, n_steps - 1, opts)
}

/// Central difference of `log h` at the nodes bracketing `x`, linearly
/// interpolated.
pub fn grid_score(h: &GridDensity, x: f64) -> Result<f64> {
    let pos = (x - h.lo) / h.step;
    if !(pos >= 2.0 && pos <= (h.len() - 3) as f64) {
        return Err(ScoreError::Oracle(format!("x = {x} is not interior to the grid")));
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    let log_at = |k: usize| {
        let v = h.values[k];
        if v > DENSITY_FLOOR {
            Ok(v.ln())
        } else {
            Err(ScoreError::Oracle(format!("density underflow near x = {x}")))
        }
    };
    let diff = |k: usize| -> Result<f64> { Ok((log_at(k + 1)? - log_at(k - 1)?) / (2.0 * h.step)) };
    let left = diff(i)?;
    if frac == 0.0 {
        return Ok(left);
    }
    Ok((1.0 - frac) * left + frac * diff(i + 1)?)
}

/// OU variance
/// `s_T² = s_0² e^{-2aT} + σ² (1 - e^{-2aT}) / (2a)`, with the `a → 0` limit.
pub fn ou_variance(a: f64, sigma: f64, s0_sq: f64, t: f64) -> f64 {
    if a.abs() < 1e-12 {
        s0_sq + sigma * sigma * t
    } else {
        let decay = (-2.0 * a * t).exp();
        s0_sq * decay + sigma * sigma * (1.0 - decay) / (2.0 * a)
    }
}

/// `-x / s_T²` for `dx = -a x dt + σ dB`, `x_0 ~ N(0, s_0²)`.
pub fn ou_analytic_score(a: f64, sigma: f64, s0_sq: f64, t: f64, x: f64) -> f64 {
    -x / ou_variance(a, sigma, s0_sq, t)
}

/// `E[w(x_0, x_1) | x_1]` under `x_0 ~ h0`, one chain step, by trapezoid
/// quadrature over the nodes of `h0`.
///
/// Nodes whose joint weight is below `1e-25` of the largest are skipped, so
/// `w` is never evaluated where the integrand is negligible.
pub fn quadrature_conditional_expectation(
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    h0: &GridDensity,
    weight: &dyn Fn(&Vector, &Vector) -> Result<Vector>,
    x1: f64,
) -> Result<Vector> {
    check_one_dimensional(map, kernel)?;
    let joint: Vec<f64> = (0..h0.len())
        .map(|j| Ok(h0.trapezoid_weight(j) * h0.values[j] * transition(map, kernel, h0.node(j), x1)?))
        .collect::<Result<_>>()?;
    let peak = joint.iter().cloned().fold(0.0, f64::max);
    if !(peak > DENSITY_FLOOR) {
        return Err(ScoreError::Oracle(format!("x1 = {x1} has negligible density")));
    }
    let x1v = Vector::from_element(1, x1);
    let mut num: Option<Vector> = None;
    let mut den = 0.0;
    for (j, &p) in joint.iter().enumerate() {
        if p < 1e-25 * peak {
            continue;
        }
        let w = weight(&Vector::from_element(1, h0.node(j)), &x1v)?;
        match num.as_mut() {
            Some(acc) => acc.axpy(p, &w, 1.0),
            None => num = Some(w * p),
        }
        den += p;
    }
    Ok(num.expect("peak node contributes") / den)
}

/// `node,density,score`; the score column is empty where the grid
/// difference is undefined.
pub fn write_oracle_csv<W: Write>(mut out: W, h: &GridDensity) -> io::Result<()> {
    writeln!(out, "node,density,score")?;
    for (i, v) in h.values.iter().enumerate() {
        let x = h.node(i);
        let score = grid_score(h, x).map(fmt_full).unwrap_or_default();
        writeln!(out, "{},{},{}", fmt_full(x), fmt_full(*v), score)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrete_scores::{one_step_divergence_term, one_step_kernel_score_term, RecursionOptions};
    use crate::model::{GaussianKernel, ScalarMap};
    use approx::assert_relative_eq;

    #[test]
    fn one_step_gaussian_convolution() {
        // x_1 = x_0 + b_0 with both standard normal gives N(0, 2).
        let h0 = GridDensity::gaussian(-10.0, 10.0, 1e-3, 0.0, 1.0).unwrap();
        let map = ScalarMap::linear(1.0, 1.0);
        let kernel = GaussianKernel::new(1, 1.0).unwrap();
        let h1 = propagate_density(&h0, &map, &kernel, 1, &PropagationOptions::default()).unwrap();
        assert!((grid_score(&h1, 1.0).unwrap() + 0.5).abs() < 1e-4);
        assert!(grid_score(&h1, 0.0).unwrap().abs() < 1e-6);
        assert!((h1.mass() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn point_mass_two_linear_steps() {
        let map = ScalarMap::linear(0.9, 1.0);
        let kernel = GaussianKernel::new(1, 1.0).unwrap();
        let h2 =
            propagate_point_mass(1.0, -10.0, 10.0, 1e-3, &map, &kernel, 2, &PropagationOptions::default()).unwrap();
        let expected = -(1.0 - 0.81) / 1.81;
        assert!((grid_score(&h2, 1.0).unwrap() - expected).abs() < 1e-4);
        assert_relative_eq!(expected, -0.104_972, max_relative = 1e-5);
    }

    #[test]
    fn near_deterministic_transport_keeps_mass() {
        let h0 = GridDensity::gaussian(-8.0, 8.0, 1e-4, 0.0, 1.0).unwrap();
        let map = ScalarMap::linear(1.0, 1e-3);
        let kernel = GaussianKernel::new(1, 1.0).unwrap();
        let h1 = propagate_density(&h0, &map, &kernel, 1, &PropagationOptions::default()).unwrap();
        assert!((h1.mass() - h0.mass()).abs() < 1e-8);
        assert!((grid_score(&h1, 0.5).unwrap() + 0.5).abs() < 1e-4);
    }

    #[test]
    fn narrow_grid_reports_leak() {
        let h0 = GridDensity::gaussian(-3.0, 3.0, 1e-2, 0.0, 1.0).unwrap();
        let map = ScalarMap::linear(0.0, 1.0);
        let kernel = GaussianKernel::new(1, 1.0).unwrap();
        assert!(matches!(
            propagate_density(&h0, &map, &kernel, 1, &PropagationOptions::default()),
            Err(ScoreError::Oracle(_))
        ));
    }

    #[test]
    fn grid_score_edges() {
        let h = GridDensity::gaussian(-5.0, 5.0, 1e-2, 0.0, 2.0).unwrap();
        assert!(grid_score(&h, -5.0).is_err());
        assert!(grid_score(&h, 4.999).is_err());
        assert!((grid_score(&h, 1.0).unwrap() + 0.5).abs() < 1e-4);
    }

    #[test]
    fn ou_variance_values() {
        assert_relative_eq!(ou_variance(1.0, 1.0, 1.0, 3.0), 0.501_239, max_relative = 1e-5);
        assert_relative_eq!(ou_analytic_score(1.0, 1.0, 1.0, 3.0, 1.0), -1.995_06, max_relative = 1e-5);
        assert_eq!(ou_analytic_score(1.0, 1.0, 1.0, 3.0, 0.0), 0.0);
        assert_eq!(ou_analytic_score(1.0, 1.0, 2.0, 0.0, 1.0), -0.5);
        assert_eq!(ou_variance(0.0, 2.0, 1.0, 0.5), 3.0);
    }

    #[test]
    fn conditional_expectations_match_propagated_score() {
        let h0 = GridDensity::gaussian(-10.0, 10.0, 1e-3, 0.0, 1.0).unwrap();
        let map = ScalarMap::linear(0.9, 1.0);
        let kernel = GaussianKernel::new(1, 1.0).unwrap();
        let h1 = propagate_density(&h0, &map, &kernel, 1, &PropagationOptions::default()).unwrap();
        let target = grid_score(&h1, 1.0).unwrap();
        assert!((target + 1.0 / 1.81).abs() < 1e-4);

        let constant =
            quadrature_conditional_expectation(&map, &kernel, &h0, &|_, _| Ok(Vector::from_element(1, 3.5)), 1.0)
                .unwrap();
        assert_relative_eq!(constant[0], 3.5, max_relative = 1e-14);

        let ker = quadrature_conditional_expectation(
            &map,
            &kernel,
            &h0,
            &|x0, x1| one_step_kernel_score_term(&map, &kernel, x0, x1),
            1.0,
        )
        .unwrap();
        assert!((ker[0] - target).abs() < 1e-4);

        let opts = RecursionOptions::default();
        let div = quadrature_conditional_expectation(
            &map,
            &kernel,
            &h0,
            &|x0, x1| one_step_divergence_term(&map, x0, x1, &(-x0), &opts),
            1.0,
        )
        .unwrap();
        assert!((div[0] - target).abs() < 1e-4);
    }
}
