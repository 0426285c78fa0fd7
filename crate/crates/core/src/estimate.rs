//! Conditional expectations `E[ν_T | x_T]` by terminal binning, empirical
//! log-densities, and the linear-response deviation statistic.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScoreError};
use crate::fmt_full;
use crate::model::Vector;

/// Equal-width half-open bins `[lo + i w, lo + (i + 1) w)` on one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
    #[serde(default)]
    pub coordinate: usize,
}

impl BinGrid {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Result<Self> {
        let grid = Self { lo, hi, n_bins, coordinate: 0 };
        grid.validate()?;
        Ok(grid)
    }

    pub fn on_coordinate(mut self, coordinate: usize) -> Self {
        self.coordinate = coordinate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(ScoreError::InvalidPlan(format!("bin grid needs lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        if self.n_bins == 0 {
            return Err(ScoreError::InvalidPlan("bin grid needs at least one bin".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n_bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn index_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x < self.hi) {
            return None;
        }
        let i = ((x - self.lo) / self.width()).floor() as usize;
        Some(i.min(self.n_bins - 1))
    }
}

/// Terminal state and covector of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSample {
    pub path_id: u64,
    pub terminal: Vector,
    pub nu: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEstimate {
    pub bin_index: usize,
    pub bin_center: f64,
    /// Paths whose terminal state fell in the bin.
    pub count: usize,
    /// Paths entering the mean (all of them unless capped per bin).
    pub used: usize,
    pub mean_nu: Vector,
    /// Componentwise `std / sqrt(used)`.
    pub se_nu: Vector,
    /// `log(count / (n_total · width))`.
    pub log_density: f64,
    /// Fewer than `min_count` paths entered the mean.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinOptions {
    pub min_count: usize,
    /// Average only the first `k` paths (by path id) of each bin.
    pub max_per_bin: Option<usize>,
}

impl Default for BinOptions {
    fn default() -> Self {
        Self { min_count: 5, max_per_bin: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedScores {
    pub grid: BinGrid,
    pub bins: Vec<ScoreEstimate>,
    pub overflow: usize,
    pub n_total: usize,
}

impl BinnedScores {
    pub fn dim(&self) -> usize {
        self.bins.first().map_or(0, |b| b.mean_nu.len())
    }
}

fn mean_and_se(values: &[&Vector], dim: usize) -> (Vector, Vector) {
    let n = values.len();
    if n == 0 {
        return (Vector::from_element(dim, f64::NAN), Vector::from_element(dim, f64::NAN));
    }
    let mut mean = Vector::zeros(dim);
    for v in values {
        mean += *v;
    }
    mean /= n as f64;
    if n < 2 {
        return (mean, Vector::from_element(dim, f64::NAN));
    }
    let mut ss = Vector::zeros(dim);
    for v in values {
        let d = *v - &mean;
        ss += d.component_mul(&d);
    }
    let se = ss.map(|s| (s / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt());
    (mean, se)
}

/// Bins terminal samples and averages their covectors per bin.
///
/// Samples are processed in path-id order, so the result does not depend on
/// the order of `samples`.
pub fn bin_and_average(samples: &[TerminalSample], grid: &BinGrid, opts: &BinOptions) -> Result<BinnedScores> {
    grid.validate()?;
    let first = samples.first().ok_or(ScoreError::EmptyInput("terminal samples"))?;
    let dim = first.nu.len();
    if grid.coordinate >= first.terminal.len() {
        return Err(ScoreError::DimensionMismatch { expected: first.terminal.len(), got: grid.coordinate + 1 });
    }
    let mut order: Vec<&TerminalSample> = samples.iter().collect();
    order.sort_by_key(|s| s.path_id);

    let mut members: Vec<Vec<&Vector>> = vec![Vec::new(); grid.n_bins];
    let mut counts = vec![0usize; grid.n_bins];
    let mut overflow = 0;
    for s in order {
        if s.nu.len() != dim {
            return Err(ScoreError::DimensionMismatch { expected: dim, got: s.nu.len() });
        }
        if s.nu.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::InvalidPlan(format!("path {} has a non-finite covector", s.path_id)));
        }
        match grid.index_of(s.terminal[grid.coordinate]) {
            Some(i) => {
                counts[i] += 1;
                if opts.max_per_bin.is_none_or(|k| members[i].len() < k) {
                    members[i].push(&s.nu);
                }
            }
            None => overflow += 1,
        }
    }
    let n_total = samples.len();
    let width = grid.width();
    let bins = (0..grid.n_bins)
        .map(|i| {
            let (mean_nu, se_nu) = mean_and_se(&members[i], dim);
            ScoreEstimate {
                bin_index: i,
                bin_center: grid.center(i),
                count: counts[i],
                used: members[i].len(),
                mean_nu,
                se_nu,
                log_density: (counts[i] as f64 / (n_total as f64 * width)).ln(),
                flagged: members[i].len() < opts.min_count,
            }
        })
        .collect();
    Ok(BinnedScores { grid: *grid, bins, overflow, n_total })
}

/// Score from the empirical density by a central difference of log-counts:
/// `(log c_+ - log c_-) / (2h)`, where `c_±` count terminal values in the
/// width-`h` windows centered at `x ± h`. The standard error uses the
/// Poisson approximation `sqrt(1/c_+ + 1/c_-) / (2h)`.
pub fn density_fd_score(samples: &[TerminalSample], coordinate: usize, x: f64, h: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(ScoreError::EmptyInput("terminal samples"));
    }
    if !(h > 0.0) {
        return Err(ScoreError::InvalidPlan(format!("difference step must be > 0, got {h}")));
    }
    let window = |c: f64| {
        samples
            .iter()
            .filter(|s| {
                let v = s.terminal[coordinate];
                v >= c - 0.5 * h && v < c + 0.5 * h
            })
            .count() as f64
    };
    let plus = window(x + h);
    let minus = window(x - h);
    if plus == 0.0 || minus == 0.0 {
        return Err(ScoreError::InvalidPlan(format!("empty difference window around {x}")));
    }
    Ok(((plus.ln() - minus.ln()) / (2.0 * h), (1.0 / plus + 1.0 / minus).sqrt() / (2.0 * h)))
}

/// Bin-averaged score `E[∇log h(x) | a <= x < b] = (h(b) - h(a)) / P[a, b)`
/// from the empirical density, with `h` at each edge estimated by counts in a
/// width-`delta` window centered there. The standard error treats the two
/// edge counts as Poisson.
pub fn density_fd_bin_score(
    samples: &[TerminalSample],
    coordinate: usize,
    a: f64,
    b: f64,
    delta: f64,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(ScoreError::EmptyInput("terminal samples"));
    }
    if !(delta > 0.0 && b > a) {
        return Err(ScoreError::InvalidPlan(format!("bad bin [{a}, {b}) or window {delta}")));
    }
    let count_in = |lo: f64, hi: f64| {
        samples
            .iter()
            .filter(|s| {
                let v = s.terminal[coordinate];
                v >= lo && v < hi
            })
            .count() as f64
    };
    let inside = count_in(a, b);
    if inside == 0.0 {
        return Err(ScoreError::InvalidPlan(format!("no samples in [{a}, {b})")));
    }
    let at_a = count_in(a - 0.5 * delta, a + 0.5 * delta);
    let at_b = count_in(b - 0.5 * delta, b + 0.5 * delta);
    Ok(((at_b - at_a) / (delta * inside), (at_a + at_b).sqrt() / (delta * inside)))
}

/// Fixed-bin histogram with under/overflow counters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Self {
        Self { lo, hi, counts: vec![0; n_bins], underflow: 0, overflow: 0 }
    }

    pub fn add(&mut self, v: f64) {
        if v < self.lo {
            self.underflow += 1;
        } else if v >= self.hi || v.is_nan() {
            self.overflow += 1;
        } else {
            let n = self.counts.len();
            let i = ((v - self.lo) / (self.hi - self.lo) * n as f64).floor() as usize;
            self.counts[i.min(n - 1)] += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRecord {
    pub path_id: u64,
    pub phi: f64,
    pub nu_dot_v: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationSummary {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub histogram: Histogram,
    pub records: Vec<DeviationRecord>,
}

/// Per-path `Φ(x_T) ⟨ν_T, v⟩ + 1`, its mean, standard error and histogram.
///
/// With `v` a unit perturbation direction of the drift, the expected
/// response is `-1`, so the deviation averages to zero.
pub fn linear_response_deviation(
    samples: &[TerminalSample],
    observable: &dyn Fn(&Vector) -> f64,
    v: &Vector,
    histogram: Histogram,
) -> Result<DeviationSummary> {
    if samples.is_empty() {
        return Err(ScoreError::EmptyInput("terminal samples"));
    }
    let mut order: Vec<&TerminalSample> = samples.iter().collect();
    order.sort_by_key(|s| s.path_id);
    let mut hist = histogram;
    let mut records = Vec::with_capacity(samples.len());
    for s in order {
        if s.nu.len() != v.len() {
            return Err(ScoreError::DimensionMismatch { expected: v.len(), got: s.nu.len() });
        }
        let phi = observable(&s.terminal);
        let nu_dot_v = s.nu.dot(v);
        let deviation = phi * nu_dot_v + 1.0;
        hist.add(deviation);
        records.push(DeviationRecord { path_id: s.path_id, phi, nu_dot_v, deviation });
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.deviation).sum::<f64>() / n;
    let se = if records.len() > 1 {
        (records.iter().map(|r| (r.deviation - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        f64::NAN
    };
    Ok(DeviationSummary { n: records.len(), mean, se, histogram: hist, records })
}

/// `bin_index,bin_center,count,log_density,mean_nu_1..M,se_nu_1..M`
pub fn write_scores_csv<W: Write>(mut out: W, scores: &BinnedScores) -> io::Result<()> {
    let m = scores.dim();
    let mut header = vec!["bin_index".to_string(), "bin_center".into(), "count".into(), "log_density".into()];
    header.extend((1..=m).map(|i| format!("mean_nu_{i}")));
    header.extend((1..=m).map(|i| format!("se_nu_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for b in &scores.bins {
        write!(out, "{},{},{},{}", b.bin_index, fmt_full(b.bin_center), b.count, fmt_full(b.log_density))?;
        for v in b.mean_nu.iter().chain(b.se_nu.iter()) {
            write!(out, ",{}", fmt_full(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `path_id,phi,nu_dot_v,deviation`
pub fn write_deviations_csv<W: Write>(mut out: W, summary: &DeviationSummary) -> io::Result<()> {
    writeln!(out, "path_id,phi,nu_dot_v,deviation")?;
    for r in &summary.records {
        writeln!(out, "{},{},{},{}", r.path_id, fmt_full(r.phi), fmt_full(r.nu_dot_v), fmt_full(r.deviation))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(id: u64, x: f64, nu: f64) -> TerminalSample {
        TerminalSample { path_id: id, terminal: Vector::from_element(1, x), nu: Vector::from_element(1, nu) }
    }

    #[test]
    fn degenerate_single_bin() {
        let grid = BinGrid::new(0.0, 1.0, 4).unwrap();
        let samples: Vec<_> = (0..10).map(|i| sample(i, 0.3, 2.5)).collect();
        let out = bin_and_average(&samples, &grid, &BinOptions::default()).unwrap();
        let b = &out.bins[1];
        assert_eq!(b.count, 10);
        assert_eq!(b.mean_nu[0], 2.5);
        assert_eq!(b.se_nu[0], 0.0);
        assert_relative_eq!(b.log_density, (1.0f64 / 0.25).ln());
        assert!(out.bins[0].flagged);
    }

    #[test]
    fn log_density_arithmetic() {
        let grid = BinGrid::new(-1.0, 1.0, 5).unwrap();
        let counts = [10, 20, 40, 20, 10];
        let mut samples = Vec::new();
        let mut id = 0;
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                samples.push(sample(id, grid.center(i), 0.0));
                id += 1;
            }
        }
        let out = bin_and_average(&samples, &grid, &BinOptions::default()).unwrap();
        assert!(out.bins[2].log_density.abs() < 1e-15);
        let mass: f64 = out.bins.iter().map(|b| b.log_density.exp() * grid.width()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overflow_and_half_open_edges() {
        let grid = BinGrid::new(0.0, 1.0, 2).unwrap();
        let samples = vec![sample(0, 0.0, 1.0), sample(1, 0.5, 1.0), sample(2, 1.0, 1.0), sample(3, -0.1, 1.0)];
        let out = bin_and_average(&samples, &grid, &BinOptions::default()).unwrap();
        assert_eq!(out.bins[0].count, 1);
        assert_eq!(out.bins[1].count, 1);
        assert_eq!(out.overflow, 2);
    }

    #[test]
    fn paths_per_bin_cap_uses_lowest_ids() {
        let grid = BinGrid::new(0.0, 1.0, 1).unwrap();
        let samples: Vec<_> = (0..20).rev().map(|i| sample(i, 0.5, i as f64)).collect();
        let opts = BinOptions { max_per_bin: Some(10), ..Default::default() };
        let out = bin_and_average(&samples, &grid, &opts).unwrap();
        assert_eq!(out.bins[0].count, 20);
        assert_eq!(out.bins[0].used, 10);
        assert_eq!(out.bins[0].mean_nu[0], 4.5);
    }

    #[test]
    fn empty_input_is_an_error() {
        let grid = BinGrid::new(0.0, 1.0, 1).unwrap();
        assert!(bin_and_average(&[], &grid, &BinOptions::default()).is_err());
        assert!(BinGrid::new(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn zero_observable_gives_unit_deviation() {
        let samples: Vec<_> = (0..5).map(|i| sample(i, i as f64, 3.0 * i as f64)).collect();
        let out =
            linear_response_deviation(&samples, &|_| 0.0, &Vector::from_element(1, 1.0), Histogram::new(-2.0, 2.0, 4))
                .unwrap();
        assert_eq!(out.mean, 1.0);
        assert_eq!(out.se, 0.0);
        assert_eq!(out.histogram.counts, vec![0, 0, 0, 5]);
    }

    #[test]
    fn scores_csv_layout() {
        let grid = BinGrid::new(0.0, 1.0, 1).unwrap();
        let samples = vec![sample(0, 0.5, 1.0), sample(1, 0.5, 3.0)];
        let out = bin_and_average(&samples, &grid, &BinOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &out).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "bin_index,bin_center,count,log_density,mean_nu_1,se_nu_1");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert_eq!(row[2], "2");
        assert_eq!(row[4].parse::<f64>().unwrap(), 2.0);
        assert_eq!(row[5].parse::<f64>().unwrap(), 1.0);
    }
}
