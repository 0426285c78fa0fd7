use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pathscore::model::{validate_derivatives, Vector};
use pathscore_cli::config::{preset, RunConfig};
use pathscore_cli::identities::{self, Check};

#[derive(Parser)]
#[command(name = "pathscore", version, about = "Pathwise Monte-Carlo score estimators for SDEs and random maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// 1-D SDE, F = -x^3, sigma = 1, kernel estimator with beta = t/T, T = 3
    OuKernel(RunFlags),
    /// 1-D SDE, F = -x^3, sigma = 0.5 + exp(-x^2), pure divergence, T = 0.1
    OuDiv(RunFlags),
    /// Same SDE, divergence-kernel estimator with alpha = 10, T = 3
    OuDivker(RunFlags),
    /// Same SDE, divergence-kernel estimator without the initial score, T = 3
    OuDivkerNoh0(RunFlags),
    /// 40-dimensional Lorenz-96 linear-response deviations, T = 0.3
    Lorenz96(RunFlags),
    /// Run the deterministic identity suite and print PASS/FAIL per identity
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Check a model's derivative callbacks against finite differences
    Derivcheck {
        /// Config file selecting the model (defaults to the 1-D cubic SDE)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of random test points
        #[arg(long, default_value_t = 16)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

#[derive(Args, Clone)]
struct RunFlags {
    /// TOML file whose keys override the experiment defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sample paths
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; changes speed only
    #[arg(long)]
    threads: Option<usize>,
    /// Write the first N paths to paths.csv
    #[arg(long)]
    dump_paths: Option<usize>,
    /// Average at most N paths per bin (0 = all)
    #[arg(long)]
    paths_per_bin: Option<usize>,
    /// Estimator override, e.g. nstep-divker
    #[arg(long)]
    estimator: Option<String>,
    /// Alpha schedule: const:R, auto:P or reciprocal-time
    #[arg(long)]
    alpha: Option<String>,
    /// Final time
    #[arg(long)]
    time: Option<f64>,
    /// Step size
    #[arg(long)]
    dt: Option<f64>,
}

fn resolve(experiment: &str, flags: &RunFlags) -> Result<RunConfig> {
    let mut cfg = preset(experiment).with_context(|| format!("unknown experiment {experiment}"))?;
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = cfg.overlay_toml(&text).with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.paths {
        cfg.n_paths = v;
    }
    if let Some(v) = &flags.out {
        cfg.out_dir = v.to_string_lossy().into_owned();
    }
    if let Some(v) = flags.threads {
        cfg.threads = v;
    }
    if let Some(v) = flags.dump_paths {
        cfg.dump_paths = v;
    }
    if let Some(v) = flags.paths_per_bin {
        cfg.paths_per_bin = v;
    }
    if let Some(v) = &flags.estimator {
        cfg.estimator = v.clone();
    }
    if let Some(v) = &flags.alpha {
        cfg.alpha = v.clone();
    }
    if let Some(v) = flags.time {
        cfg.total_time = v;
    }
    if let Some(v) = flags.dt {
        cfg.dt = v;
    }
    Ok(cfg)
}

fn run_experiment(experiment: &str, flags: &RunFlags) -> Result<bool> {
    let cfg = resolve(experiment, flags)?;
    let (report, dir) = pathscore_cli::run(&cfg)?;
    print!("{}", report.summary());
    println!("outputs in {}", dir.display());
    Ok(true)
}

fn validate(seed: u64) -> Result<bool> {
    let mut checks: Vec<Check> = identities::one_step_quadrature()?;
    checks.extend(identities::degeneration(seed)?);
    checks.extend(identities::approximation_order(seed)?);
    for c in &checks {
        println!("{}", c.line());
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} identities passed", checks.len() - failed, checks.len());
    Ok(failed == 0)
}

fn derivcheck(config: Option<&PathBuf>, seed: u64, points: usize, step: f64) -> Result<bool> {
    let cfg = match config {
        Some(path) => RunConfig::from_toml_str(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let model = cfg.build_model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vector> =
        (0..points).map(|_| Vector::from_fn(model.dim(), |_, _| StandardNormal.sample(&mut rng))).collect();
    let report = validate_derivatives(model.as_ref(), &pts, step)?;
    println!("{}: {report}", model.name());
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::OuKernel(f) => run_experiment("ou-kernel", f),
        Command::OuDiv(f) => run_experiment("ou-div", f),
        Command::OuDivker(f) => run_experiment("ou-divker", f),
        Command::OuDivkerNoh0(f) => run_experiment("ou-divker-noh0", f),
        Command::Lorenz96(f) => run_experiment("lorenz96", f),
        Command::Validate { seed } => validate(*seed),
        Command::Derivcheck { config, seed, points, step } => derivcheck(config.as_ref(), *seed, *points, *step),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
