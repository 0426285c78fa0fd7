use std::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::Vector;
use crate::error::{Result, ScoreError};

/// Density `k` of the i.i.d. noise `b_n` of a discrete chain.
pub trait NoiseKernel: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, b: &[f64]) -> f64;

    fn density(&self, b: &[f64]) -> f64 {
        self.log_density(b).exp()
    }

    /// `∇log k(b)`
    fn log_density_gradient(&self, b: &[f64]) -> Vector;

    fn sample(&self, rng: &mut dyn RngCore) -> Vector;

    /// Radius outside of which the density is negligible, used to band
    /// quadrature sums. `None` means unbounded support must be integrated.
    fn effective_radius(&self) -> Option<f64> {
        None
    }
}

/// Isotropic Gaussian `N(0, variance · I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    dim: usize,
    variance: f64,
}

impl GaussianKernel {
    pub fn new(dim: usize, variance: f64) -> Result<Self> {
        if dim == 0 {
            return Err(ScoreError::InvalidModel("kernel dimension must be positive".into()));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(ScoreError::InvalidModel(format!("kernel variance must be > 0, got {variance}")));
        }
        Ok(Self { dim, variance })
    }

    /// Brownian increment kernel for step `dt`.
    pub fn brownian(dim: usize, dt: f64) -> Result<Self> {
        Self::new(dim, dt)
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

impl NoiseKernel for GaussianKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, b: &[f64]) -> f64 {
        let sq: f64 = b.iter().map(|v| v * v).sum();
        -0.5 * sq / self.variance - 0.5 * self.dim as f64 * (2.0 * PI * self.variance).ln()
    }

    fn log_density_gradient(&self, b: &[f64]) -> Vector {
        Vector::from_iterator(self.dim, b.iter().map(|v| -v / self.variance))
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vector {
        let sd = self.variance.sqrt();
        Vector::from_fn(self.dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
    }

    fn effective_radius(&self) -> Option<f64> {
        Some(12.0 * self.variance.sqrt())
    }
}

/// Law of `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    /// Isotropic Gaussian `N(mean, variance · I)`.
    Gaussian { mean: Vector, variance: f64 },
    /// Dirac mass; has no score.
    PointMass(Vector),
}

impl InitialDistribution {
    pub fn standard_normal(dim: usize) -> Self {
        Self::Gaussian { mean: Vector::zeros(dim), variance: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::PointMass(x) => x.len(),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vector {
        match self {
            Self::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                Vector::from_fn(mean.len(), |i, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    mean[i] + sd * z
                })
            }
            Self::PointMass(x) => x.clone(),
        }
    }

    pub fn has_score(&self) -> bool {
        matches!(self, Self::Gaussian { .. })
    }

    /// `∇log h_0(x)`, absent for singular laws.
    pub fn score(&self, x: &Vector) -> Option<Vector> {
        match self {
            Self::Gaussian { mean, variance } => Some((mean - x) / *variance),
            Self::PointMass(_) => None,
        }
    }

    /// Initial density in one dimension, for the quadrature oracle.
    pub fn density_1d(&self, x: f64) -> Option<f64> {
        match self {
            Self::Gaussian { mean, variance } if mean.len() == 1 => {
                let d = x - mean[0];
                Some((-0.5 * d * d / variance).exp() / (2.0 * PI * variance).sqrt())
            }
            _ => None,
        }
    }
}
