//! Deterministic identity checks: one-step quadrature, degeneration of the
//! recursions, and the order of the small-step approximations.

use anyhow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pathscore::discrete_scores::{
    nstep_divergence_score, nstep_divker_forward, nstep_divker_forward_trace, nstep_divker_noh0_trace,
    one_step_divergence_term, one_step_divker_term, one_step_kernel_score_term, step_geometry_exact, RecursionOptions,
    DEFAULT_DET_FLOOR,
};
use pathscore::model::{
    DiffusionKind, DriftKind, EulerMap, GaussianKernel, InitialDistribution, NoiseKernel, ScalarMap, SeparableSde,
    StepMap, SystemModel, Vector,
};
use pathscore::oracle::{
    grid_score, propagate_density, quadrature_conditional_expectation, GridDensity, PropagationOptions,
};
use pathscore::paths::{simulate_discrete_path, simulate_sde_path, SimulationPlan};
use pathscore::schedules::Schedule;
use pathscore::sde_scores::{
    approx_div_jacobian, approx_pullback_inverse_apply, drive_covector, DriveOptions, SdeStepper,
};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    /// Largest observed error (or the measured statistic).
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance, detail: detail.into() }
    }

    fn at_least(name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), value, tolerance, passed: value >= tolerance, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.3e} (tolerance {:.1e}){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            if self.detail.is_empty() { String::new() } else { format!("  [{}]", self.detail) }
        )
    }
}

pub const QUADRATURE_TOL: f64 = 1e-4;
const BENCH_DT: f64 = 0.01;

fn v1(x: f64) -> Vector {
    Vector::from_element(1, x)
}

fn cubic(diffusion: DiffusionKind) -> SeparableSde {
    SeparableSde::new(1, DriftKind::Cubic, diffusion)
}

/// Test points `-1.8, -1.44, ..., 1.8`.
pub fn test_points() -> Vec<f64> {
    (0..11).map(|i| -1.8 + 0.36 * i as f64).collect()
}

/// One-step conditional expectations of the kernel, divergence and
/// divergence-kernel terms against the quadrature-propagated score of
/// `h_1`, for `h_0 = N(0, 1)`.
pub fn one_step_quadrature() -> Result<Vec<Check>> {
    let linear = ScalarMap::linear(0.9, 1.0);
    let additive = cubic(DiffusionKind::Constant(1.0));
    let bump = cubic(DiffusionKind::Bump { base: 0.5 });
    let euler_add = EulerMap::new(&additive, BENCH_DT);
    let euler_bump = EulerMap::new(&bump, BENCH_DT);
    let unit = GaussianKernel::new(1, 1.0)?;
    let small = GaussianKernel::brownian(1, BENCH_DT)?;
    let cases: [(&str, &dyn StepMap, &GaussianKernel); 3] = [
        ("f=0.9x, sigma=1", &linear, &unit),
        ("Euler -x^3, sigma=1", &euler_add, &small),
        ("Euler -x^3, sigma=0.5+exp(-x^2)", &euler_bump, &small),
    ];
    let opts = RecursionOptions::default();
    let h0 = GridDensity::gaussian(-9.0, 9.0, 1e-3, 0.0, 1.0)?;
    let mut checks = Vec::new();
    for (label, map, kernel) in cases {
        let h1 = propagate_density(&h0, map, kernel, 1, &PropagationOptions::default())?;
        let mut worst = [0.0f64; 5];
        for x in test_points() {
            let target = grid_score(&h1, x)?;
            let term = |w: &dyn Fn(&Vector, &Vector) -> pathscore::Result<Vector>| -> Result<f64> {
                Ok(quadrature_conditional_expectation(map, kernel, &h0, w, x)?[0])
            };
            let values = [
                term(&|x0, x1| one_step_kernel_score_term(map, kernel, x0, x1))?,
                term(&|x0, x1| one_step_divergence_term(map, x0, x1, &(-x0), &opts))?,
                term(&|x0, x1| one_step_divker_term(map, kernel, x0, x1, &(-x0), 0.0, &opts))?,
                term(&|x0, x1| one_step_divker_term(map, kernel, x0, x1, &(-x0), 0.3, &opts))?,
                term(&|x0, x1| one_step_divker_term(map, kernel, x0, x1, &(-x0), 1.0, &opts))?,
            ];
            for (w, v) in worst.iter_mut().zip(values) {
                *w = w.max((v - target).abs());
            }
        }
        let names = ["kernel", "divergence", "divker alpha=0", "divker alpha=0.3", "divker alpha=1"];
        for (name, w) in names.iter().zip(worst) {
            checks.push(Check::at_most(format!("one-step {name} ({label})"), w, QUADRATURE_TOL, "max over 11 points"));
        }
    }
    Ok(checks)
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Degeneration and scaling identities of the divergence-kernel family.
pub fn degeneration(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let bump = cubic(DiffusionKind::Bump { base: 0.5 });
    let dt = 0.002;
    let map = EulerMap::new(&bump, dt);
    let kernel = GaussianKernel::brownian(1, dt)?;
    let init = InitialDistribution::standard_normal(1);
    let opts = RecursionOptions::default();
    let steps = 250;
    let n_paths = 50u64;

    let (mut zero_nstep, mut zero_sde, mut one_last, mut recip) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let plan = SimulationPlan::new(steps as f64 * dt, steps, n_paths as usize, seed)?;
    for id in 0..n_paths {
        let path = simulate_discrete_path(&map, &kernel, &init, steps, seed, id)?;
        let div = nstep_divergence_score(&path, &map, &init, &opts)?;
        let zero = nstep_divker_forward(&path, &map, &kernel, &Schedule::constant(0.0), &init, &opts)?;
        zero_nstep = zero_nstep.max(rel_err(div[0], zero[0]));

        let one = nstep_divker_forward(&path, &map, &kernel, &Schedule::constant(1.0), &init, &opts)?;
        let last = steps - 1;
        let expected =
            kernel.log_density_gradient(path.increments[last].as_slice()) / map.diffusion(&path.states[last]);
        one_last = one_last.max((one - expected).abs().max());

        let mut fwd = Vec::new();
        nstep_divker_forward_trace(&path, &map, &kernel, &Schedule::reciprocal_step(), &init, &opts, |_, nu| {
            fwd.push(nu[0])
        })?;
        let mut noh0 = Vec::new();
        nstep_divker_noh0_trace(&path, &map, &kernel, &opts, |_, nu| noh0.push(nu[0]))?;
        for n in 1..=steps {
            recip = recip.max(rel_err(n as f64 / steps as f64 * fwd[n], noh0[n]));
        }

        let sde_path = simulate_sde_path(&bump, &init, &plan, id)?;
        let drive = DriveOptions::default();
        let a = drive_covector(&sde_path, &bump, &SdeStepper::Divergence, &init, &drive)?.nu;
        let b = drive_covector(&sde_path, &bump, &SdeStepper::DivKer(Schedule::constant(0.0)), &init, &drive)?.nu;
        zero_sde = zero_sde.max(rel_err(a[0], b[0]));
    }
    let detail = format!("{n_paths} paths, {steps} steps");
    checks.push(Check::at_most("alpha=0 N-step divker equals divergence", zero_nstep, 1e-12, detail.clone()));
    checks.push(Check::at_most("alpha=0 SDE divker equals divergence", zero_sde, 1e-12, detail.clone()));
    checks.push(Check::at_most("alpha=1 N-step divker equals last kernel term", one_last, 0.0, detail.clone()));
    checks.push(Check::at_most("reciprocal alpha with n/N scaling equals no-h0", recip, 1e-10, detail));
    checks.push(reciprocal_time_identity(seed, 0.002)?);
    Ok(checks)
}

/// `(t/T) ν'_T` with `α = 1/t` against the no-`h_0` covector on shared OU
/// paths; the largest per-path gap must stay below `2√Δt`.
pub fn reciprocal_time_identity(seed: u64, dt: f64) -> Result<Check> {
    let model = SeparableSde::linear_ou(1, 1.0, 1.0);
    let init = InitialDistribution::standard_normal(1);
    let n_paths = 200;
    let plan = SimulationPlan::from_step_size(1.0, dt, n_paths, seed)?;
    let drive = DriveOptions::default();
    let mut worst = 0.0f64;
    for id in 0..n_paths as u64 {
        let path = simulate_sde_path(&model, &init, &plan, id)?;
        let tempered = drive_covector(&path, &model, &SdeStepper::DivKer(Schedule::reciprocal_time()), &init, &drive)?;
        let noh0 = drive_covector(&path, &model, &SdeStepper::DivKerNoH0, &init, &drive)?;
        let t_over_t = path.total_time() / plan.total_time;
        worst = worst.max((t_over_t * tempered.nu[0] - noh0.nu[0]).abs());
    }
    Ok(Check::at_most(
        "reciprocal-time divker matches no-h0 on shared paths",
        worst,
        2.0 * dt.sqrt(),
        format!("{n_paths} OU paths, dt={dt}, max per-path gap"),
    ))
}

/// Mean `|approx - exact|` of `div g_*` and `g^{*-1}` over random draws.
pub fn approximation_errors(model: &dyn SystemModel, dt: f64, draws: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = EulerMap::new(model, dt);
    let (mut div_err, mut inv_err) = (0.0, 0.0);
    for _ in 0..draws {
        let x: f64 = StandardNormal.sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let (xv, db) = (v1(x), v1(z * dt.sqrt()));
        let exact = step_geometry_exact(&map, &xv, &db, DEFAULT_DET_FLOOR)?;
        div_err += (approx_div_jacobian(model, &xv, &db, dt)[0] - exact.div_jacobian[0]).abs();
        let nu = v1(1.0);
        inv_err += (approx_pullback_inverse_apply(model, &xv, &db, dt, &nu)[0]
            - exact.pullback_inverse(&nu, DEFAULT_DET_FLOOR, 0)?[0])
            .abs();
    }
    Ok((div_err / draws as f64, inv_err / draws as f64))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

pub fn approximation_order(seed: u64) -> Result<Vec<Check>> {
    let model = cubic(DiffusionKind::Bump { base: 0.5 });
    let dts = [1e-2, 1e-3, 1e-4];
    let mut div = Vec::new();
    let mut inv = Vec::new();
    for &dt in &dts {
        let (d, i) = approximation_errors(&model, dt, 10_000, seed)?;
        div.push(d);
        inv.push(i);
    }
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ");
    Ok(vec![
        Check::at_least("approximation order of div g", loglog_slope(&dts, &div), 0.9, format!("errors {}", fmt(&div))),
        Check::at_least("approximation order of g^-1", loglog_slope(&dts, &inv), 0.9, format!("errors {}", fmt(&inv))),
    ])
}
