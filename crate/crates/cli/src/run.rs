//! Executes a [`RunConfig`]: simulate, estimate, aggregate, write outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use pathscore::estimate::{
    bin_and_average, linear_response_deviation, write_deviations_csv, write_scores_csv, BinOptions, BinnedScores,
    DeviationSummary, Histogram,
};
use pathscore::model::{InitialDistribution, SystemModel, Vector};
use pathscore::paths::{simulate_sde_path, write_path_dump, SimulationPlan};
use pathscore::pipeline::{run_estimator, Estimator, RunOptions, RunOutcome};
use pathscore::schedules::{beta_linear, safe_alpha_estimate, Schedule};

use crate::config::{parse_alpha, parse_beta, AlphaSpec, BetaSpec, RunConfig};

#[derive(Debug, Clone, Serialize)]
pub struct BinRow {
    pub bin_index: usize,
    pub bin_center: f64,
    pub count: usize,
    pub used: usize,
    pub log_density: f64,
    pub mean_nu: Vec<f64>,
    pub se_nu: Vec<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationRow {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub estimator: String,
    pub model: String,
    pub seed: u64,
    pub n_paths: usize,
    pub n_kept: usize,
    pub n_capped: usize,
    pub n_divergent: usize,
    pub n_singular: usize,
    pub max_abs_nu: f64,
    /// Rate used when `alpha` was `auto:P`.
    pub alpha_resolved: Option<f64>,
    pub wall_time_s: f64,
    pub overflow: Option<usize>,
    pub bins: Option<Vec<BinRow>>,
    pub deviation: Option<DeviationRow>,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} [{}] on {}: {} paths, {} kept, {} capped, {} divergent, {} singular, max |nu| {:.3e}, {:.2}s\n",
            self.experiment,
            self.estimator,
            self.model,
            self.n_paths,
            self.n_kept,
            self.n_capped,
            self.n_divergent,
            self.n_singular,
            self.max_abs_nu,
            self.wall_time_s
        );
        if let Some(a) = self.alpha_resolved {
            s.push_str(&format!("alpha (auto) = {a:.6}\n"));
        }
        if let Some(bins) = &self.bins {
            s.push_str("  center     count   log h      mean nu_1     se_1\n");
            for b in bins {
                s.push_str(&format!(
                    "  {:+.3} {:>9} {:>8.4} {:>13.5} {:>8.5}{}\n",
                    b.bin_center,
                    b.count,
                    b.log_density,
                    b.mean_nu.first().copied().unwrap_or(f64::NAN),
                    b.se_nu.first().copied().unwrap_or(f64::NAN),
                    if b.flagged { "  (few paths)" } else { "" }
                ));
            }
        }
        if let Some(d) = &self.deviation {
            s.push_str(&format!("  deviation mean {:.5} ± {:.5} (SE) over {} paths\n", d.mean, d.se, d.n));
        }
        s
    }
}

/// In-memory results of a run.
pub struct RunResults {
    pub report: RunReport,
    pub outcome: RunOutcome,
    pub scores: Option<BinnedScores>,
    pub deviations: Option<DeviationSummary>,
}

fn is_response_run(cfg: &RunConfig) -> bool {
    cfg.model == "lorenz96" || cfg.experiment == "lorenz96"
}

fn alpha_schedule(
    cfg: &RunConfig,
    nstep: bool,
    model: &dyn SystemModel,
    init: &InitialDistribution,
    plan: &SimulationPlan,
) -> Result<(Schedule, Option<f64>)> {
    let dt = plan.dt();
    let (rate, resolved) = match parse_alpha(&cfg.alpha)? {
        AlphaSpec::ReciprocalTime => {
            return Ok((if nstep { Schedule::reciprocal_step() } else { Schedule::reciprocal_time() }, None));
        }
        AlphaSpec::Constant(r) => (r, None),
        AlphaSpec::Auto { probes } => {
            let r = safe_alpha_estimate(model, init, plan, probes, plan.seed.wrapping_add(0x5afe))?;
            (r, Some(r))
        }
    };
    Ok((Schedule::constant(if nstep { rate * dt } else { rate }), resolved))
}

fn beta_schedule(cfg: &RunConfig) -> Result<Schedule> {
    Ok(match parse_beta(&cfg.beta)? {
        BetaSpec::Linear => beta_linear(cfg.total_time)?,
        BetaSpec::Constant(b) => Schedule::constant(b),
    })
}

/// Runs the configured experiment without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<RunResults> {
    cfg.validate()?;
    let start = Instant::now();
    let model = cfg.build_model()?;
    let init = cfg.build_init();
    let plan = cfg.plan()?;
    let nstep = cfg.estimator.starts_with("nstep");
    let mut alpha_resolved = None;
    let estimator = match cfg.estimator.as_str() {
        "sde-kernel" => Estimator::SdeKernel { beta: beta_schedule(cfg)? },
        "sde-divergence" => Estimator::SdeDivergence,
        "sde-divker" | "nstep-divker" => {
            let (alpha, resolved) = alpha_schedule(cfg, nstep, model.as_ref(), &init, &plan)?;
            alpha_resolved = resolved;
            if nstep {
                Estimator::NStepDivKer { alpha }
            } else {
                Estimator::SdeDivKer { alpha }
            }
        }
        "sde-divker-noh0" => Estimator::SdeDivKerNoH0,
        "nstep-kernel" => Estimator::NStepKernel { beta: beta_schedule(cfg)? },
        "nstep-divergence" => Estimator::NStepDivergence,
        "nstep-divker-noh0" => Estimator::NStepDivKerNoH0,
        other => anyhow::bail!("unknown estimator {other:?}"),
    };
    let opts = RunOptions {
        cap: cfg.cap,
        allow_negative_alpha: cfg.allow_negative_alpha,
        threads: (cfg.threads > 0).then_some(cfg.threads),
        ..Default::default()
    };
    let outcome = run_estimator(model.as_ref(), &init, &plan, &estimator, &opts)
        .with_context(|| format!("running {}", cfg.estimator))?;

    let (mut scores, mut deviations) = (None, None);
    if !outcome.samples.is_empty() {
        if is_response_run(cfg) {
            let m = model.dim();
            let v = Vector::from_element(m, 1.0);
            let hist = Histogram::new(cfg.hist_lo, cfg.hist_hi, cfg.hist_bins);
            deviations = Some(linear_response_deviation(&outcome.samples, &|x: &Vector| x.mean(), &v, hist)?);
        } else {
            let bin_opts = BinOptions {
                min_count: cfg.min_count,
                max_per_bin: (cfg.paths_per_bin > 0).then_some(cfg.paths_per_bin),
            };
            scores = Some(bin_and_average(&outcome.samples, &cfg.bin_grid()?, &bin_opts)?);
        }
    }

    let report = RunReport {
        experiment: cfg.experiment.clone(),
        estimator: cfg.estimator.clone(),
        model: model.name(),
        seed: cfg.seed,
        n_paths: outcome.n_paths,
        n_kept: outcome.samples.len(),
        n_capped: outcome.n_capped,
        n_divergent: outcome.n_divergent,
        n_singular: outcome.n_singular,
        max_abs_nu: outcome.max_abs_nu,
        alpha_resolved,
        wall_time_s: start.elapsed().as_secs_f64(),
        overflow: scores.as_ref().map(|s| s.overflow),
        bins: scores.as_ref().map(|s| {
            s.bins
                .iter()
                .map(|b| BinRow {
                    bin_index: b.bin_index,
                    bin_center: b.bin_center,
                    count: b.count,
                    used: b.used,
                    log_density: b.log_density,
                    mean_nu: b.mean_nu.iter().copied().collect(),
                    se_nu: b.se_nu.iter().copied().collect(),
                    flagged: b.flagged,
                })
                .collect()
        }),
        deviation: deviations.as_ref().map(|d| DeviationRow {
            n: d.n,
            mean: d.mean,
            se: d.se,
            histogram: d.histogram.clone(),
        }),
    };
    Ok(RunResults { report, outcome, scores, deviations })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

/// Runs the experiment and writes `config.toml`, `report.json`, and
/// `scores.csv` or `deviations.csv` (plus `paths.csv` when requested) into
/// `cfg.out_dir`.
pub fn run(cfg: &RunConfig) -> Result<(RunReport, PathBuf)> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    let results = execute(cfg)?;
    if let Some(scores) = &results.scores {
        write_scores_csv(create(&dir, "scores.csv")?, scores)?;
    }
    if let Some(dev) = &results.deviations {
        write_deviations_csv(create(&dir, "deviations.csv")?, dev)?;
    }
    if cfg.dump_paths > 0 {
        let model = cfg.build_model()?;
        let init = cfg.build_init();
        let plan = cfg.plan()?;
        let paths = (0..cfg.dump_paths.min(cfg.n_paths) as u64)
            .map(|id| simulate_sde_path(model.as_ref(), &init, &plan, id))
            .collect::<pathscore::Result<Vec<_>>>()?;
        write_path_dump(create(&dir, "paths.csv")?, &paths)?;
    }
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&results.report)?)?;
    Ok((results.report, dir))
}
