use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pathscore::discrete_scores::{nstep_divergence_score, nstep_divker_forward, nstep_divker_noh0, RecursionOptions};
use pathscore::model::{
    lorenz96_model, DiffusionKind, DriftKind, EulerMap, GaussianKernel, InitialDistribution, SeparableSde, SystemModel,
    Vector,
};
use pathscore::paths::{simulate_sde_path, SimulationPlan};
use pathscore::pipeline::{run_estimator, Estimator, RunOptions};
use pathscore::schedules::Schedule;
use pathscore::sde_scores::{drive_covector, sde_divergence_step, sde_divker_step, DriveOptions, SdeStepper};

fn bump() -> SeparableSde {
    SeparableSde::new(1, DriftKind::Cubic, DiffusionKind::Bump { base: 0.5 })
}

fn single_steps(c: &mut Criterion) {
    let model = bump();
    let x = Vector::from_element(1, 0.3);
    let nu = Vector::from_element(1, -0.7);
    let db = Vector::from_element(1, 0.02);
    let mut g = c.benchmark_group("sde step 1-D");
    g.bench_function("divergence", |b| {
        b.iter(|| sde_divergence_step(&model, black_box(&x), black_box(&nu), &db, 0.002))
    });
    g.bench_function("divker", |b| {
        b.iter(|| sde_divker_step(&model, black_box(&x), black_box(&nu), &db, 0.002, 10.0).unwrap())
    });
    g.finish();

    let l96 = lorenz96_model(0.01, 2.0);
    let x = Vector::from_fn(40, |i, _| (i as f64 * 0.3).sin());
    let nu = Vector::from_fn(40, |i, _| (i as f64 * 0.7).cos());
    let db = Vector::from_fn(40, |i, _| 0.01 * (i as f64).sin());
    let mut g = c.benchmark_group("sde step Lorenz-96");
    g.bench_function("drift", |b| b.iter(|| l96.drift(black_box(&x))));
    g.bench_function("divergence", |b| b.iter(|| sde_divergence_step(&l96, black_box(&x), black_box(&nu), &db, 0.002)));
    g.finish();
}

fn path_recursions(c: &mut Criterion) {
    let model = bump();
    let init = InitialDistribution::standard_normal(1);
    let plan = SimulationPlan::from_step_size(1.0, 0.002, 1, 1).unwrap();
    let path = simulate_sde_path(&model, &init, &plan, 0).unwrap();
    let map = EulerMap::new(&model, plan.dt());
    let kernel = GaussianKernel::brownian(1, plan.dt()).unwrap();
    let opts = RecursionOptions::default();
    let alpha = Schedule::constant(10.0 * plan.dt());
    let drive = DriveOptions::default();

    let mut g = c.benchmark_group("500-step path 1-D");
    g.bench_function("simulate", |b| b.iter(|| simulate_sde_path(&model, &init, &plan, black_box(0)).unwrap()));
    g.bench_function("nstep divergence", |b| b.iter(|| nstep_divergence_score(&path, &map, &init, &opts).unwrap()));
    g.bench_function("nstep divker", |b| {
        b.iter(|| nstep_divker_forward(&path, &map, &kernel, &alpha, &init, &opts).unwrap())
    });
    g.bench_function("nstep divker no-h0", |b| b.iter(|| nstep_divker_noh0(&path, &map, &kernel, &opts).unwrap()));
    for (name, stepper) in [
        ("sde divergence", SdeStepper::Divergence),
        ("sde divker", SdeStepper::DivKer(Schedule::constant(10.0))),
        ("sde divker no-h0", SdeStepper::DivKerNoH0),
    ] {
        g.bench_function(name, |b| b.iter(|| drive_covector(&path, &model, &stepper, &init, &drive).unwrap()));
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    let model = bump();
    let init = InitialDistribution::standard_normal(1);
    for n in [200usize, 1000] {
        let plan = SimulationPlan::from_step_size(1.0, 0.002, n, 1).unwrap();
        let est = Estimator::SdeDivKer { alpha: Schedule::constant(10.0) };
        g.bench_with_input(BenchmarkId::new("1-D divker paths", n), &plan, |b, plan| {
            b.iter(|| run_estimator(&model, &init, plan, &est, &RunOptions::default()).unwrap())
        });
    }
    let l96 = lorenz96_model(0.01, 2.0);
    let init = InitialDistribution::PointMass(Vector::from_element(40, 1.0));
    let plan = SimulationPlan::from_step_size(0.3, 0.002, 50, 1).unwrap();
    g.bench_function("Lorenz-96 no-h0, 50 paths", |b| {
        b.iter(|| run_estimator(&l96, &init, &plan, &Estimator::SdeDivKerNoH0, &RunOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, single_steps, path_recursions, pipeline);
criterion_main!(benches);
