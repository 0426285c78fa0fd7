//! Exact score recursions for discrete chains `x_{n+1} = f(x_n) + σ(x_n) b_n`.
//!
//! Every estimator returns a per-path covector whose conditional expectation
//! given the terminal state is `∇log h_N(x_N)`.
//!
//! Notation: `g_b(x) = f(x) + σ(x) b` is the step map at fixed noise,
//! `g_{b*} = ∇f + b ∇σ^T` its Jacobian, `div g_{b*} = ∇|g_{b*}| / |g_{b*}|`,
//! and `g_b^{*-1} ν` solves `g_{b*}^T w = ν`.

use crate::error::{Result, ScoreError};
use crate::model::{checked_diffusion, InitialDistribution, Matrix, NoiseKernel, StepMap, Vector};
use crate::paths::PathRecord;
use crate::schedules::{Schedule, ScheduleKind};

pub const DEFAULT_COVECTOR_CAP: f64 = 1e12;
pub const DEFAULT_DET_FLOOR: f64 = 1e-12;
pub const DEFAULT_PROBE_STEP: f64 = 1e-5;

/// Running covector `ν_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovectorState {
    pub nu: Vector,
    pub step_index: usize,
}

impl CovectorState {
    pub fn new(nu: Vector, step_index: usize) -> Self {
        Self { nu, step_index }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { nu: Vector::zeros(dim), step_index: 0 }
    }

    /// Errors if `ν` is non-finite or its norm exceeds `cap`.
    pub fn check(&self, cap: f64) -> Result<()> {
        let norm = self.nu.norm();
        if norm <= cap {
            Ok(())
        } else {
            Err(ScoreError::CovectorExplosion { step: self.step_index, norm })
        }
    }
}

/// Jacobian of the step map at fixed noise and its log-determinant gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGeometry {
    pub jacobian: Matrix,
    pub div_jacobian: Vector,
}

impl StepGeometry {
    pub fn determinant(&self) -> f64 {
        if self.jacobian.nrows() == 1 {
            self.jacobian[(0, 0)]
        } else {
            self.jacobian.clone().lu().determinant()
        }
    }

    /// `g_b^{*-1} ν`, solving `g_{b*}^T w = ν` by partially pivoted LU.
    pub fn pullback_inverse(&self, nu: &Vector, det_floor: f64, step: usize) -> Result<Vector> {
        if self.jacobian.nrows() == 1 {
            let j = self.jacobian[(0, 0)];
            if !(j.abs() > det_floor) {
                return Err(ScoreError::SingularStep { step, determinant: j });
            }
            return Ok(nu / j);
        }
        let lu = self.jacobian.transpose().lu();
        let det = lu.determinant();
        if !(det.abs() > det_floor) {
            return Err(ScoreError::SingularStep { step, determinant: det });
        }
        lu.solve(nu).ok_or(ScoreError::SingularStep { step, determinant: det })
    }
}

/// How `g_{b*}` and `div g_{b*}` are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryMode {
    /// Closed form; one-dimensional maps only.
    Exact,
    /// Assembled Jacobian with finite-differenced log-determinant.
    Generic { probe_step: f64 },
    /// `Exact` when available, otherwise `Generic` with the default probe step.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionOptions {
    pub geometry: GeometryMode,
    /// Largest allowed `|ν|`.
    pub cap: f64,
    pub det_floor: f64,
    /// Permit `α < 0`.
    pub allow_negative_alpha: bool,
}

impl Default for RecursionOptions {
    fn default() -> Self {
        Self {
            geometry: GeometryMode::Auto,
            cap: DEFAULT_COVECTOR_CAP,
            det_floor: DEFAULT_DET_FLOOR,
            allow_negative_alpha: false,
        }
    }
}

fn noise_of(map: &dyn StepMap, x0: &Vector, x1: &Vector) -> Result<(f64, Vector)> {
    crate::model::check_dim(map.dim(), x0.len())?;
    crate::model::check_dim(map.dim(), x1.len())?;
    let sigma = checked_diffusion(map.diffusion(x0), x0)?;
    Ok((sigma, (x1 - map.map(x0)) / sigma))
}

/// `p(x_0, x_1) = σ(x_0)^{-M} k((x_1 - f(x_0)) / σ(x_0))`.
pub fn transition_density(map: &dyn StepMap, kernel: &dyn NoiseKernel, x0: &Vector, x1: &Vector) -> Result<f64> {
    let (sigma, b) = noise_of(map, x0, x1)?;
    Ok(sigma.powi(-(map.dim() as i32)) * kernel.density(b.as_slice()))
}

fn kernel_source(kernel: &dyn NoiseKernel, sigma: f64, b: &Vector) -> Vector {
    kernel.log_density_gradient(b.as_slice()) / sigma
}

/// Kernel-differentiation integrand `∇log k(b_0) / σ(x_0)`.
pub fn one_step_kernel_score_term(
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    x0: &Vector,
    x1: &Vector,
) -> Result<Vector> {
    let (sigma, b) = noise_of(map, x0, x1)?;
    Ok(kernel_source(kernel, sigma, &b))
}

/// Divergence integrand `g_{b_0}^{*-1}(∇log h_0(x_0) - div g_{b_0*}(x_0))`.
pub fn one_step_divergence_term(
    map: &dyn StepMap,
    x0: &Vector,
    x1: &Vector,
    init_score: &Vector,
    opts: &RecursionOptions,
) -> Result<Vector> {
    let (_, b) = noise_of(map, x0, x1)?;
    let geom = step_geometry(map, x0, &b, opts)?;
    geom.pullback_inverse(&(init_score - &geom.div_jacobian), opts.det_floor, 0)
}

/// Divergence-kernel integrand with scalar weight `α`:
/// `α ∇log k(b_0)/σ + (1 - α) g^{*-1}(∇log h_0 - div g_*)`.
pub fn one_step_divker_term(
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    x0: &Vector,
    x1: &Vector,
    init_score: &Vector,
    alpha: f64,
    opts: &RecursionOptions,
) -> Result<Vector> {
    let ker = one_step_kernel_score_term(map, kernel, x0, x1)?;
    let div = one_step_divergence_term(map, x0, x1, init_score, opts)?;
    Ok(div * (1.0 - alpha) + ker * alpha)
}

/// Closed-form geometry of a one-dimensional map:
/// `g_* = f' + b σ'`, `div g_* = (f'' + b σ'') / (f' + b σ')`.
pub fn step_geometry_exact(map: &dyn StepMap, x: &Vector, b: &Vector, det_floor: f64) -> Result<StepGeometry> {
    if map.dim() != 1 {
        return Err(ScoreError::InvalidModel(format!(
            "exact step geometry is one-dimensional, map has M = {}",
            map.dim()
        )));
    }
    let (f2, s2) = map
        .scalar_second_derivatives(x[0])
        .ok_or_else(|| ScoreError::InvalidModel("map has no closed-form second derivatives".into()))?;
    let f1 = map.map_jacobian(x)[(0, 0)];
    let s1 = map.diffusion_gradient(x)[0];
    let jac = f1 + b[0] * s1;
    if !(jac.abs() > det_floor) {
        return Err(ScoreError::SingularStep { step: 0, determinant: jac });
    }
    Ok(StepGeometry {
        jacobian: Matrix::from_element(1, 1, jac),
        div_jacobian: Vector::from_element(1, (f2 + b[0] * s2) / jac),
    })
}

fn noisy_jacobian(map: &dyn StepMap, x: &Vector, b: &Vector) -> Matrix {
    let mut jac = map.map_jacobian(x);
    jac.ger(1.0, b, &map.diffusion_gradient(x), 1.0);
    jac
}

fn log_abs_det(jac: Matrix, det_floor: f64) -> Result<f64> {
    let det = jac.lu().determinant();
    if det.abs() > det_floor {
        Ok(det.abs().ln())
    } else {
        Err(ScoreError::SingularStep { step: 0, determinant: det })
    }
}

/// Geometry for any dimension: `g_* = ∇f + b ∇σ^T` assembled from the map,
/// `div g_*` by central differences of `log|det g_*|` in each coordinate.
///
/// Costs `2M + 1` determinants; meant for validation at small `M`.
pub fn step_geometry_generic(
    map: &dyn StepMap,
    x: &Vector,
    b: &Vector,
    probe_step: f64,
    det_floor: f64,
) -> Result<StepGeometry> {
    if !(probe_step > 0.0) {
        return Err(ScoreError::InvalidModel(format!("probe step must be > 0, got {probe_step}")));
    }
    let m = map.dim();
    let jacobian = noisy_jacobian(map, x, b);
    log_abs_det(jacobian.clone(), det_floor)?;
    let mut div = Vector::zeros(m);
    for i in 0..m {
        let mut xp = x.clone();
        xp[i] += probe_step;
        let mut xm = x.clone();
        xm[i] -= probe_step;
        let lp = log_abs_det(noisy_jacobian(map, &xp, b), det_floor)?;
        let lm = log_abs_det(noisy_jacobian(map, &xm, b), det_floor)?;
        div[i] = (lp - lm) / (2.0 * probe_step);
    }
    Ok(StepGeometry { jacobian, div_jacobian: div })
}

fn step_geometry(map: &dyn StepMap, x: &Vector, b: &Vector, opts: &RecursionOptions) -> Result<StepGeometry> {
    match opts.geometry {
        GeometryMode::Exact => step_geometry_exact(map, x, b, opts.det_floor),
        GeometryMode::Generic { probe_step } => step_geometry_generic(map, x, b, probe_step, opts.det_floor),
        GeometryMode::Auto => {
            if map.dim() == 1 && map.scalar_second_derivatives(x[0]).is_some() {
                step_geometry_exact(map, x, b, opts.det_floor)
            } else {
                step_geometry_generic(map, x, b, DEFAULT_PROBE_STEP, opts.det_floor)
            }
        }
    }
}

fn with_step(err: ScoreError, step: usize) -> ScoreError {
    match err {
        ScoreError::SingularStep { determinant, .. } => ScoreError::SingularStep { step, determinant },
        other => other,
    }
}

fn required_init_score(init: &InitialDistribution, x0: &Vector, estimator: &'static str) -> Result<Vector> {
    init.score(x0).ok_or(ScoreError::MissingInitialScore { estimator })
}

fn check_path(path: &PathRecord, map: &dyn StepMap) -> Result<()> {
    crate::model::check_dim(map.dim(), path.dim())?;
    if path.states.len() != path.increments.len() + 1 {
        return Err(ScoreError::InvalidPlan("path has inconsistent state/increment counts".into()));
    }
    Ok(())
}

fn checked_alpha(alpha: f64, opts: &RecursionOptions) -> Result<f64> {
    if !alpha.is_finite() {
        return Err(ScoreError::Schedule(format!("alpha evaluated to {alpha}")));
    }
    if alpha < 0.0 && !opts.allow_negative_alpha {
        return Err(ScoreError::Schedule(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(alpha)
}

/// N-step kernel-differentiation estimator for additive noise:
///
/// `β_0 ∇log h_0(x_0) + (1/σ) Σ_n (β_{n+1} I - β_n ∇f^T(x_n)) ∇log k(b_n)`
///
/// with `β_N = 1`. The initial score is only needed when `β_0 ≠ 0`.
pub fn nstep_kernel_score(
    path: &PathRecord,
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    beta: &Schedule,
    init: &InitialDistribution,
) -> Result<Vector> {
    const NAME: &str = "nstep-kernel";
    check_path(path, map)?;
    if !map.is_additive() {
        return Err(ScoreError::UnsupportedNoise { estimator: NAME });
    }
    if matches!(beta.kind(), ScheduleKind::StateDependent(_)) {
        return Err(ScoreError::Schedule("beta must be predictable; it may not read the current state".into()));
    }
    let steps = path.steps();
    let dt = path.dt;
    beta.validate_terminal_one(steps, dt, path.terminal())?;
    let beta_at = |n: usize| beta.value_at(n, n as f64 * dt, &path.states[n]);

    let beta0 = beta_at(0);
    let mut nu =
        if beta0 != 0.0 { required_init_score(init, path.initial(), NAME)? * beta0 } else { Vector::zeros(path.dim()) };
    let mut beta_n = beta0;
    for n in 0..steps {
        let x = &path.states[n];
        let sigma = checked_diffusion(map.diffusion(x), x)?;
        let beta_next = beta_at(n + 1);
        let g = kernel.log_density_gradient(path.increments[n].as_slice());
        let mut term = map.map_jacobian_transpose_apply(x, &g) * (-beta_n);
        term.axpy(beta_next, &g, 1.0);
        nu.axpy(1.0 / sigma, &term, 1.0);
        beta_n = beta_next;
    }
    Ok(nu)
}

/// Recursive divergence estimator: `ν_0 = ∇log h_0(x_0)`,
/// `ν_{n+1} = g_{b_n}^{*-1}(ν_n - div g_{b_n*}(x_n))`.
pub fn nstep_divergence_score(
    path: &PathRecord,
    map: &dyn StepMap,
    init: &InitialDistribution,
    opts: &RecursionOptions,
) -> Result<Vector> {
    nstep_divergence_trace(path, map, init, opts, |_, _| {})
}

pub fn nstep_divergence_trace(
    path: &PathRecord,
    map: &dyn StepMap,
    init: &InitialDistribution,
    opts: &RecursionOptions,
    mut observe: impl FnMut(usize, &Vector),
) -> Result<Vector> {
    check_path(path, map)?;
    let mut state = CovectorState::new(required_init_score(init, path.initial(), "nstep-divergence")?, 0);
    observe(0, &state.nu);
    for n in 0..path.steps() {
        let x = &path.states[n];
        let geom = step_geometry(map, x, &path.increments[n], opts).map_err(|e| with_step(e, n))?;
        state.nu = geom.pullback_inverse(&(&state.nu - &geom.div_jacobian), opts.det_floor, n)?;
        state.step_index = n + 1;
        state.check(opts.cap)?;
        observe(n + 1, &state.nu);
    }
    Ok(state.nu)
}

/// Forward divergence-kernel estimator: `ν_0 = ∇log h_0(x_0)`,
///
/// `ν_{n+1} = (1 - α_{n+1}) g_{b_n}^{*-1}(ν_n - div g_{b_n*}(x_n)) + α_{n+1} ∇log k(b_n) / σ(x_n)`
///
/// `α_{n+1}` is evaluated at step `n + 1` on the state `x_{n+1}`.
pub fn nstep_divker_forward(
    path: &PathRecord,
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    alpha: &Schedule,
    init: &InitialDistribution,
    opts: &RecursionOptions,
) -> Result<Vector> {
    nstep_divker_forward_trace(path, map, kernel, alpha, init, opts, |_, _| {})
}

pub fn nstep_divker_forward_trace(
    path: &PathRecord,
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    alpha: &Schedule,
    init: &InitialDistribution,
    opts: &RecursionOptions,
    mut observe: impl FnMut(usize, &Vector),
) -> Result<Vector> {
    check_path(path, map)?;
    let mut state = CovectorState::new(required_init_score(init, path.initial(), "nstep-divker")?, 0);
    observe(0, &state.nu);
    let dt = path.dt;
    for n in 0..path.steps() {
        let x = &path.states[n];
        let b = &path.increments[n];
        let a = checked_alpha(alpha.value_at(n + 1, (n + 1) as f64 * dt, &path.states[n + 1]), opts)?;
        let sigma = checked_diffusion(map.diffusion(x), x)?;
        let geom = step_geometry(map, x, b, opts).map_err(|e| with_step(e, n))?;
        let pulled = geom.pullback_inverse(&(&state.nu - &geom.div_jacobian), opts.det_floor, n)?;
        state.nu = pulled * (1.0 - a) + kernel_source(kernel, sigma, b) * a;
        state.step_index = n + 1;
        state.check(opts.cap)?;
        observe(n + 1, &state.nu);
    }
    Ok(state.nu)
}

/// Divergence-kernel estimator without the initial score: `ν_0 = 0`,
///
/// `ν_{n+1} = g_{b_n}^{*-1}(ν_n - (n/N) div g_{b_n*}(x_n)) + ∇log k(b_n) / (N σ(x_n))`
pub fn nstep_divker_noh0(
    path: &PathRecord,
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    opts: &RecursionOptions,
) -> Result<Vector> {
    nstep_divker_noh0_trace(path, map, kernel, opts, |_, _| {})
}

pub fn nstep_divker_noh0_trace(
    path: &PathRecord,
    map: &dyn StepMap,
    kernel: &dyn NoiseKernel,
    opts: &RecursionOptions,
    mut observe: impl FnMut(usize, &Vector),
) -> Result<Vector> {
    check_path(path, map)?;
    let steps = path.steps();
    let total = steps as f64;
    let mut state = CovectorState::zeros(path.dim());
    observe(0, &state.nu);
    for n in 0..steps {
        let x = &path.states[n];
        let b = &path.increments[n];
        let sigma = checked_diffusion(map.diffusion(x), x)?;
        let geom = step_geometry(map, x, b, opts).map_err(|e| with_step(e, n))?;
        let weight = n as f64 / total;
        let mut pulled = geom.pullback_inverse(&(&state.nu - &geom.div_jacobian * weight), opts.det_floor, n)?;
        pulled.axpy(1.0 / (total * sigma), &kernel.log_density_gradient(b.as_slice()), 1.0);
        state.nu = pulled;
        state.step_index = n + 1;
        state.check(opts.cap)?;
        observe(n + 1, &state.nu);
    }
    Ok(state.nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionKind, DriftKind, EulerMap, GaussianKernel, ScalarMap, SeparableSde};
    use crate::paths::simulate_discrete_path;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn bump_map() -> ScalarMap {
        // f = x - x³Δt with σ₂ = 0.5 + e^{-x²}, Δt = 0.002
        let dt = 0.002;
        ScalarMap::new(
            move |x| x - x * x * x * dt,
            move |x| 1.0 - 3.0 * x * x * dt,
            move |x| -6.0 * x * dt,
            |x| 0.5 + (-x * x).exp(),
            |x| -2.0 * x * (-x * x).exp(),
            |x| (4.0 * x * x - 2.0) * (-x * x).exp(),
        )
    }

    #[test]
    fn transition_density_examples() {
        let k = GaussianKernel::new(1, 1.0).unwrap();
        let zero_map = ScalarMap::linear(0.0, 1.0);
        let p = transition_density(&zero_map, &k, &v1(0.0), &v1(0.0)).unwrap();
        assert_relative_eq!(p, 0.398_942_280_401_432_7, max_relative = 1e-15);
        let wide = ScalarMap::linear(0.0, 2.0);
        let p2 = transition_density(&wide, &k, &v1(0.0), &v1(0.0)).unwrap();
        assert_relative_eq!(p2, 0.5 * 0.398_942_280_401_432_7, max_relative = 1e-15);
    }

    #[test]
    fn transition_density_integrates_to_one() {
        let k = GaussianKernel::new(1, 1.0).unwrap();
        let map = bump_map();
        let h = 1e-3;
        let x0 = v1(0.4);
        let n = 20_000;
        let mut mass = 0.0;
        for i in 0..=n {
            let x1 = -10.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            mass += w * h * transition_density(&map, &k, &x0, &v1(x1)).unwrap();
        }
        assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
    }

    #[test]
    fn kernel_term_examples() {
        let k = GaussianKernel::new(1, 1.0).unwrap();
        let map = ScalarMap::linear(0.0, 2.0);
        assert_eq!(one_step_kernel_score_term(&map, &k, &v1(0.0), &v1(0.0)).unwrap()[0], 0.0);
        assert_relative_eq!(one_step_kernel_score_term(&map, &k, &v1(0.0), &v1(1.0)).unwrap()[0], -0.25);
    }

    #[test]
    fn exact_geometry_examples() {
        let linear = ScalarMap::linear(0.9, 1.3);
        let g = step_geometry_exact(&linear, &v1(0.4), &v1(1.2), DEFAULT_DET_FLOOR).unwrap();
        assert_eq!(g.div_jacobian[0], 0.0);

        let cubic = SeparableSde::new(1, DriftKind::Cubic, DiffusionKind::Constant(1.0));
        let map = EulerMap::new(&cubic, 0.002);
        let g = step_geometry_exact(&map, &v1(1.0), &v1(0.37), DEFAULT_DET_FLOOR).unwrap();
        assert_relative_eq!(g.jacobian[(0, 0)], 0.994, max_relative = 1e-15);
        assert_relative_eq!(g.div_jacobian[0], -0.012 / 0.994, max_relative = 1e-14);
        assert_relative_eq!(g.div_jacobian[0], -0.012_072_4, max_relative = 1e-5);

        let bump = bump_map();
        let b = 0.3;
        let g = step_geometry_exact(&bump, &v1(0.0), &v1(b), DEFAULT_DET_FLOOR).unwrap();
        assert_eq!(g.jacobian[(0, 0)], 1.0);
        assert_relative_eq!(g.div_jacobian[0], -2.0 * b, max_relative = 1e-15);
    }

    #[test]
    fn singular_geometry_is_an_error() {
        let map = ScalarMap::linear(0.0, 1.0);
        assert!(matches!(
            step_geometry_exact(&map, &v1(0.0), &v1(0.0), DEFAULT_DET_FLOOR),
            Err(ScoreError::SingularStep { .. })
        ));
    }

    #[test]
    fn generic_geometry_matches_exact_in_one_dimension() {
        let model = SeparableSde::new(1, DriftKind::Cubic, DiffusionKind::Bump { base: 0.5 });
        let map = EulerMap::new(&model, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = v1(rng.random_range(-1.5..1.5));
            let b = v1(rng.random_range(-0.4..0.4));
            let exact = step_geometry_exact(&map, &x, &b, DEFAULT_DET_FLOOR).unwrap();
            let generic = step_geometry_generic(&map, &x, &b, 1e-5, DEFAULT_DET_FLOOR).unwrap();
            assert_relative_eq!(exact.jacobian[(0, 0)], generic.jacobian[(0, 0)], max_relative = 1e-14);
            let e = exact.div_jacobian[0];
            let g = generic.div_jacobian[0];
            assert!((e - g).abs() <= 1e-7 * e.abs().max(1e-2), "exact {e} generic {g}");
        }
    }

    #[test]
    fn generic_geometry_constant_jacobian() {
        let model = SeparableSde::linear_ou(3, 0.8, 0.5);
        let map = EulerMap::new(&model, 0.01);
        let x = Vector::from_vec(vec![0.2, -0.5, 1.0]);
        let b = Vector::from_vec(vec![0.1, 0.05, -0.2]);
        let g = step_geometry_generic(&map, &x, &b, 1e-5, DEFAULT_DET_FLOOR).unwrap();
        assert!(g.div_jacobian.amax() <= 1e-9);
    }

    #[test]
    fn generic_geometry_factorizes_for_decoupled_copies() {
        // Constant diffusion keeps the two coordinates independent.
        let model2 = SeparableSde::new(2, DriftKind::Cubic, DiffusionKind::Constant(0.7));
        let model1 = SeparableSde::new(1, DriftKind::Cubic, DiffusionKind::Constant(0.7));
        let map2 = EulerMap::new(&model2, 0.05);
        let map1 = EulerMap::new(&model1, 0.05);
        let x = Vector::from_vec(vec![0.6, -1.1]);
        let b = Vector::from_vec(vec![0.2, -0.1]);
        let g2 = step_geometry_generic(&map2, &x, &b, 1e-5, DEFAULT_DET_FLOOR).unwrap();
        for i in 0..2 {
            let g1 = step_geometry_exact(&map1, &v1(x[i]), &v1(b[i]), DEFAULT_DET_FLOOR).unwrap();
            assert!((g2.div_jacobian[i] - g1.div_jacobian[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn pullback_inverse_solves_transpose_system() {
        let geom = StepGeometry {
            jacobian: Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 3.0]),
            div_jacobian: Vector::zeros(2),
        };
        let nu = Vector::from_vec(vec![1.0, -2.0]);
        let w = geom.pullback_inverse(&nu, DEFAULT_DET_FLOOR, 0).unwrap();
        assert!((geom.jacobian.tr_mul(&w) - nu).norm() < 1e-14);
    }

    fn linear_chain_path(steps: usize, path_id: u64) -> (ScalarMap, GaussianKernel, InitialDistribution, PathRecord) {
        let map = ScalarMap::linear(0.9, 1.0);
        let kernel = GaussianKernel::new(1, 1.0).unwrap();
        let init = InitialDistribution::standard_normal(1);
        let path = simulate_discrete_path(&map, &kernel, &init, steps, 99, path_id).unwrap();
        (map, kernel, init, path)
    }

    #[test]
    fn nstep_kernel_single_step_reduces_to_one_step_term() {
        let (map, kernel, init, path) = linear_chain_path(1, 0);
        // β_0 = 0, β_1 = 1 on a unit-step grid
        let beta = Schedule::tabulated(vec![0.0, 1.0]);
        let nu = nstep_kernel_score(&path, &map, &kernel, &beta, &init).unwrap();
        let one = one_step_kernel_score_term(&map, &kernel, &path.states[0], &path.states[1]).unwrap();
        assert_relative_eq!(nu[0], one[0], max_relative = 1e-13);
    }

    #[test]
    fn nstep_kernel_uses_initial_score_when_beta0_nonzero() {
        let (map, kernel, init, path) = linear_chain_path(3, 1);
        let beta = Schedule::constant(1.0);
        let nu = nstep_kernel_score(&path, &map, &kernel, &beta, &init).unwrap();
        let mut expected = -path.states[0][0];
        for n in 0..3 {
            let g = -path.increments[n][0];
            expected += g - 0.9 * g;
        }
        assert_relative_eq!(nu[0], expected, max_relative = 1e-14);
        let point = InitialDistribution::PointMass(v1(0.0));
        assert!(matches!(
            nstep_kernel_score(&path, &map, &kernel, &beta, &point),
            Err(ScoreError::MissingInitialScore { .. })
        ));
    }

    #[test]
    fn nstep_kernel_rejects_multiplicative_noise_and_bad_beta() {
        let map = bump_map();
        let kernel = GaussianKernel::new(1, 0.002).unwrap();
        let init = InitialDistribution::standard_normal(1);
        let path = simulate_discrete_path(&map, &kernel, &init, 4, 1, 0).unwrap();
        let beta = Schedule::tabulated(vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(matches!(
            nstep_kernel_score(&path, &map, &kernel, &beta, &init),
            Err(ScoreError::UnsupportedNoise { .. })
        ));
        let (map, kernel, init, path) = linear_chain_path(4, 2);
        let bad = Schedule::tabulated(vec![0.0, 0.25, 0.5, 0.75, 0.9]);
        assert!(matches!(nstep_kernel_score(&path, &map, &kernel, &bad, &init), Err(ScoreError::Schedule(_))));
    }

    #[test]
    fn divergence_base_case_matches_one_step_formula() {
        let map = bump_map();
        let kernel = GaussianKernel::new(1, 0.002).unwrap();
        let init = InitialDistribution::standard_normal(1);
        let path = simulate_discrete_path(&map, &kernel, &init, 1, 8, 0).unwrap();
        let opts = RecursionOptions::default();
        let nu = nstep_divergence_score(&path, &map, &init, &opts).unwrap();
        let score0 = init.score(&path.states[0]).unwrap();
        let one = one_step_divergence_term(&map, &path.states[0], &path.states[1], &score0, &opts).unwrap();
        assert_relative_eq!(nu[0], one[0], max_relative = 1e-12);
    }

    #[test]
    fn linear_additive_divergence_is_scalar_pullback() {
        let (map, _, init, path) = linear_chain_path(5, 3);
        let nu = nstep_divergence_score(&path, &map, &init, &RecursionOptions::default()).unwrap();
        let expected = 0.9f64.powi(-5) * -path.states[0][0];
        assert_relative_eq!(nu[0], expected, max_relative = 1e-14);
    }

    #[test]
    fn divker_degenerates_to_divergence_and_kernel() {
        let map = bump_map();
        let kernel = GaussianKernel::new(1, 0.002).unwrap();
        let init = InitialDistribution::standard_normal(1);
        let opts = RecursionOptions::default();
        for id in 0..10 {
            let path = simulate_discrete_path(&map, &kernel, &init, 50, 12, id).unwrap();
            let div = nstep_divergence_score(&path, &map, &init, &opts).unwrap();
            let zero = nstep_divker_forward(&path, &map, &kernel, &Schedule::constant(0.0), &init, &opts).unwrap();
            assert_eq!(div, zero);
            let one = nstep_divker_forward(&path, &map, &kernel, &Schedule::constant(1.0), &init, &opts).unwrap();
            let sigma = map.diffusion(&path.states[49]);
            assert_eq!(one, kernel_source(&kernel, sigma, &path.increments[49]));
            let recomputed = one_step_kernel_score_term(&map, &kernel, &path.states[49], &path.states[50]).unwrap();
            assert!((one[0] - recomputed[0]).abs() <= 1e-12 * one[0].abs());
        }
    }

    #[test]
    fn noh0_single_step_is_kernel_term() {
        let (map, kernel, _, path) = linear_chain_path(1, 4);
        let nu = nstep_divker_noh0(&path, &map, &kernel, &RecursionOptions::default()).unwrap();
        let one = one_step_kernel_score_term(&map, &kernel, &path.states[0], &path.states[1]).unwrap();
        assert_relative_eq!(nu[0], one[0], max_relative = 1e-13);
    }

    #[test]
    fn noh0_matches_reciprocal_alpha_with_step_scaling() {
        let map = bump_map();
        let kernel = GaussianKernel::new(1, 0.002).unwrap();
        let init = InitialDistribution::standard_normal(1);
        let opts = RecursionOptions::default();
        let steps = 200;
        for id in 0..5 {
            let path = simulate_discrete_path(&map, &kernel, &init, steps, 31, id).unwrap();
            let mut fwd = Vec::new();
            nstep_divker_forward_trace(&path, &map, &kernel, &Schedule::reciprocal_step(), &init, &opts, |_, nu| {
                fwd.push(nu[0])
            })
            .unwrap();
            let mut noh0 = Vec::new();
            nstep_divker_noh0_trace(&path, &map, &kernel, &opts, |_, nu| noh0.push(nu[0])).unwrap();
            for n in 1..=steps {
                let scaled = n as f64 / steps as f64 * fwd[n];
                assert!(
                    (scaled - noh0[n]).abs() <= 1e-10 * noh0[n].abs().max(1e-12),
                    "step {n}: {scaled} vs {}",
                    noh0[n]
                );
            }
        }
    }

    #[test]
    fn explosion_cap_reports_step() {
        let (map, _, init, path) = linear_chain_path(40, 5);
        let opts = RecursionOptions { cap: 1.0, ..Default::default() };
        let shrinking = ScalarMap::linear(0.1, 1.0);
        let err = nstep_divergence_score(&path, &shrinking, &init, &opts);
        assert!(matches!(err, Err(ScoreError::CovectorExplosion { .. })));
        let _ = map;
    }
}
