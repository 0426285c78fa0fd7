//! Flat TOML run configuration.
//!
//! Every key is optional; subcommands fill in experiment defaults. Unknown
//! keys and ill-typed values are all reported together.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use pathscore::estimate::BinGrid;
use pathscore::model::{DiffusionKind, DriftKind, InitialDistribution, Lorenz96, SeparableSde, SystemModel, Vector};
use pathscore::paths::SimulationPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub experiment: String,
    /// `sde1d` or `lorenz96`
    pub model: String,
    /// `cubic`, `linear` or `zero`
    pub drift: String,
    pub rate: f64,
    /// `constant` or `bump`
    pub diffusion: String,
    pub sigma: f64,
    pub diffusion_base: f64,
    pub dim: usize,
    pub damping: f64,
    pub base_diffusion: f64,
    /// `normal` or `point`
    pub init: String,
    pub init_mean: f64,
    pub init_variance: f64,
    pub init_point: f64,
    pub total_time: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub estimator: String,
    /// `const:R`, `auto:P`, `reciprocal-time`
    pub alpha: String,
    /// `linear` or `const:B`
    pub beta: String,
    pub allow_negative_alpha: bool,
    pub cap: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n_bins: usize,
    pub bin_coordinate: usize,
    pub min_count: usize,
    /// Average at most this many paths per bin; 0 means all.
    pub paths_per_bin: usize,
    pub hist_lo: f64,
    pub hist_hi: f64,
    pub hist_bins: usize,
    /// 0 means the global thread pool.
    pub threads: usize,
    /// Write the first this many paths to `paths.csv`.
    pub dump_paths: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "custom".into(),
            model: "sde1d".into(),
            drift: "cubic".into(),
            rate: 1.0,
            diffusion: "constant".into(),
            sigma: 1.0,
            diffusion_base: 0.5,
            dim: 1,
            damping: 0.01,
            base_diffusion: 2.0,
            init: "normal".into(),
            init_mean: 0.0,
            init_variance: 1.0,
            init_point: 1.0,
            total_time: 3.0,
            dt: 0.002,
            n_paths: 20_000,
            seed: 1,
            estimator: "sde-kernel".into(),
            alpha: "const:10".into(),
            beta: "linear".into(),
            allow_negative_alpha: false,
            cap: 1e12,
            bin_lo: -1.8,
            bin_hi: 1.8,
            n_bins: 9,
            bin_coordinate: 0,
            min_count: 5,
            paths_per_bin: 0,
            hist_lo: -20.0,
            hist_hi: 20.0,
            hist_bins: 40,
            threads: 0,
            dump_paths: 0,
            out_dir: "out".into(),
        }
    }
}

pub const ESTIMATORS: &[&str] = &[
    "sde-kernel",
    "sde-divergence",
    "sde-divker",
    "sde-divker-noh0",
    "nstep-kernel",
    "nstep-divergence",
    "nstep-divker",
    "nstep-divker-noh0",
];

pub const EXPERIMENTS: &[&str] = &["ou-kernel", "ou-div", "ou-divker", "ou-divker-noh0", "lorenz96"];

/// Defaults of a named experiment. The one-dimensional experiments use the
/// cubic drift `F = -x³`; `ou-kernel` has `σ ≡ 1`, the others
/// `σ = 0.5 + e^{-x²}`.
pub fn preset(experiment: &str) -> Option<RunConfig> {
    let base = RunConfig { experiment: experiment.into(), out_dir: format!("out/{experiment}"), ..Default::default() };
    let bump = RunConfig { diffusion: "bump".into(), ..base.clone() };
    Some(match experiment {
        "ou-kernel" => RunConfig { estimator: "sde-kernel".into(), ..base },
        "ou-div" => RunConfig { estimator: "sde-divergence".into(), total_time: 0.1, ..bump },
        "ou-divker" => RunConfig { estimator: "sde-divker".into(), ..bump },
        "ou-divker-noh0" => RunConfig { estimator: "sde-divker-noh0".into(), ..bump },
        "lorenz96" => RunConfig {
            model: "lorenz96".into(),
            dim: 40,
            init: "point".into(),
            init_point: 1.0,
            total_time: 0.3,
            n_paths: 10_000,
            estimator: "sde-divker-noh0".into(),
            hist_lo: -50.0,
            hist_hi: 50.0,
            hist_bins: 50,
            ..base
        },
        _ => return None,
    })
}

/// Parsed `alpha` setting. Values are rates; the N-step recursions use
/// `α_n = rate · Δt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSpec {
    Constant(f64),
    Auto { probes: usize },
    ReciprocalTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSpec {
    Linear,
    Constant(f64),
}

pub fn parse_alpha(s: &str) -> Result<AlphaSpec> {
    let s = s.trim();
    if s == "reciprocal-time" {
        return Ok(AlphaSpec::ReciprocalTime);
    }
    if let Some(v) = s.strip_prefix("const:") {
        return Ok(AlphaSpec::Constant(v.trim().parse()?));
    }
    if let Some(v) = s.strip_prefix("auto:") {
        let probes: usize = v.trim().parse()?;
        if probes == 0 {
            bail!("auto alpha needs at least one probe path");
        }
        return Ok(AlphaSpec::Auto { probes });
    }
    bail!("expected const:R, auto:P or reciprocal-time, got {s:?}")
}

pub fn parse_beta(s: &str) -> Result<BetaSpec> {
    let s = s.trim();
    if s == "linear" {
        return Ok(BetaSpec::Linear);
    }
    if let Some(v) = s.strip_prefix("const:") {
        return Ok(BetaSpec::Constant(v.trim().parse()?));
    }
    bail!("expected linear or const:B, got {s:?}")
}

impl RunConfig {
    /// Parses TOML text, listing every unknown key and every ill-typed value.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        let known = toml::Table::try_from(RunConfig::default())?;
        let mut problems = Vec::new();
        for (key, value) in &table {
            if !known.contains_key(key) {
                problems.push(format!("unknown key `{key}`"));
                continue;
            }
            let mut single = toml::Table::new();
            single.insert(key.clone(), value.clone());
            if let Err(e) = single.try_into::<RunConfig>() {
                problems.push(format!("key `{key}`: {}", e.message().trim()));
            }
        }
        if !problems.is_empty() {
            bail!("invalid config:\n  {}", problems.join("\n  "));
        }
        Ok(table.try_into()?)
    }

    /// Applies the keys present in `text` on top of `self`.
    pub fn overlay_toml(&self, text: &str) -> Result<Self> {
        RunConfig::from_toml_str(text)?;
        let mut base = toml::Table::try_from(self)?;
        base.extend(text.parse::<toml::Table>()?);
        Ok(base.try_into()?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks value ranges and names, listing every problem.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !matches!(self.model.as_str(), "sde1d" | "lorenz96") {
            problems.push(format!("model: expected sde1d or lorenz96, got {:?}", self.model));
        }
        if !matches!(self.drift.as_str(), "cubic" | "linear" | "zero") {
            problems.push(format!("drift: expected cubic, linear or zero, got {:?}", self.drift));
        }
        if !matches!(self.diffusion.as_str(), "constant" | "bump") {
            problems.push(format!("diffusion: expected constant or bump, got {:?}", self.diffusion));
        }
        if !matches!(self.init.as_str(), "normal" | "point") {
            problems.push(format!("init: expected normal or point, got {:?}", self.init));
        }
        if !ESTIMATORS.contains(&self.estimator.as_str()) {
            problems.push(format!("estimator: expected one of {}, got {:?}", ESTIMATORS.join(", "), self.estimator));
        }
        if let Err(e) = parse_alpha(&self.alpha) {
            problems.push(format!("alpha: {e}"));
        }
        if let Err(e) = parse_beta(&self.beta) {
            problems.push(format!("beta: {e}"));
        }
        if self.dim == 0 {
            problems.push("dim: must be >= 1".into());
        }
        if !(self.init_variance > 0.0) {
            problems.push("init_variance: must be > 0".into());
        }
        if !(self.cap > 0.0) {
            problems.push("cap: must be > 0".into());
        }
        if self.n_paths == 0 {
            problems.push("n_paths: must be >= 1".into());
        }
        if let Err(e) = self.plan() {
            problems.push(format!("total_time/dt: {e}"));
        }
        if let Err(e) = BinGrid::new(self.bin_lo, self.bin_hi, self.n_bins) {
            problems.push(format!("bins: {e}"));
        }
        if self.bin_coordinate >= self.state_dim() {
            problems.push("bin_coordinate: exceeds the state dimension".into());
        }
        if !(self.hist_hi > self.hist_lo) || self.hist_bins == 0 {
            problems.push("hist_lo/hist_hi/hist_bins: need hist_lo < hist_hi and at least one bin".into());
        }
        if !problems.is_empty() {
            bail!("invalid config:\n  {}", problems.join("\n  "));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn plan(&self) -> Result<SimulationPlan> {
        Ok(SimulationPlan::from_step_size(self.total_time, self.dt, self.n_paths, self.seed)?)
    }

    pub fn bin_grid(&self) -> Result<BinGrid> {
        Ok(BinGrid::new(self.bin_lo, self.bin_hi, self.n_bins)?.on_coordinate(self.bin_coordinate))
    }

    pub fn build_model(&self) -> Result<Box<dyn SystemModel>> {
        Ok(match self.model.as_str() {
            "lorenz96" => Box::new(Lorenz96::new(self.dim, self.damping, self.base_diffusion)?),
            "sde1d" => {
                let drift = match self.drift.as_str() {
                    "cubic" => DriftKind::Cubic,
                    "linear" => DriftKind::Linear { rate: self.rate },
                    "zero" => DriftKind::Zero,
                    other => bail!("unknown drift {other:?}"),
                };
                let diffusion = match self.diffusion.as_str() {
                    "constant" => {
                        if !(self.sigma > 0.0) {
                            bail!("sigma must be > 0");
                        }
                        DiffusionKind::Constant(self.sigma)
                    }
                    "bump" => DiffusionKind::Bump { base: self.diffusion_base },
                    other => bail!("unknown diffusion {other:?}"),
                };
                Box::new(SeparableSde::new(self.dim, drift, diffusion))
            }
            other => bail!("unknown model {other:?}"),
        })
    }

    pub fn build_init(&self) -> InitialDistribution {
        let m = self.state_dim();
        match self.init.as_str() {
            "point" => InitialDistribution::PointMass(Vector::from_element(m, self.init_point)),
            _ => InitialDistribution::Gaussian {
                mean: Vector::from_element(m, self.init_mean),
                variance: self.init_variance,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cfg = RunConfig { alpha: "auto:8".into(), seed: 99, ..Default::default() };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn every_offending_key_is_listed() {
        let err = RunConfig::from_toml_str("bogus = 1\nseed = \"x\"\nn_paths = -3\ndt = 0.01\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus"), "{msg}");
        assert!(msg.contains("seed"), "{msg}");
        assert!(msg.contains("n_paths"), "{msg}");
        assert!(!msg.contains("`dt`"), "{msg}");
    }

    #[test]
    fn overlay_keeps_unset_keys() {
        let base = RunConfig { diffusion: "bump".into(), total_time: 0.1, ..Default::default() };
        let cfg = base.overlay_toml("n_paths = 50\n").unwrap();
        assert_eq!(cfg.n_paths, 50);
        assert_eq!(cfg.diffusion, "bump");
        assert_eq!(cfg.total_time, 0.1);
        assert!(base.overlay_toml("nope = 1").is_err());
    }

    #[test]
    fn presets_are_valid() {
        for name in EXPERIMENTS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.experiment, *name);
        }
        assert!(preset("figures").is_none());
    }

    #[test]
    fn schedule_specs() {
        assert_eq!(parse_alpha("const:10").unwrap(), AlphaSpec::Constant(10.0));
        assert_eq!(parse_alpha("auto:32").unwrap(), AlphaSpec::Auto { probes: 32 });
        assert!(parse_alpha("auto:0").is_err());
        assert_eq!(parse_beta("linear").unwrap(), BetaSpec::Linear);
        assert_eq!(parse_beta("const:1").unwrap(), BetaSpec::Constant(1.0));
        assert!(parse_beta("quadratic").is_err());
    }

    #[test]
    fn semantic_validation_lists_problems() {
        let cfg = RunConfig { estimator: "magic".into(), n_bins: 0, ..Default::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("estimator") && msg.contains("bins"), "{msg}");
        RunConfig::default().validate().unwrap();
    }
}
