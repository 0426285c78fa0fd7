//! Drift/diffusion models with analytic derivative bundles.
//!
//! A [`SystemModel`] describes the Itô SDE `dx = F(x) dt + σ(x) dB` in `R^M`
//! with a scalar diffusion field `σ` multiplying an `M`-dimensional Brownian
//! motion. Every model carries the derivatives the score recursions need
//! (`∇F^T ν`, `div F`, `∇div F`, `∇σ`, `∇²σ·w`, `Δσ`); finite differences
//! are only used by [`validate_derivatives`] to check them.

mod kernel;
mod lorenz;
mod map;
mod separable;
mod validate;

use nalgebra::{DMatrix, DVector};

pub use kernel::{GaussianKernel, InitialDistribution, NoiseKernel};
pub use lorenz::{lorenz96_model, Lorenz96};
pub use map::{EulerMap, ScalarMap, StepMap};
pub use separable::{DiffusionKind, DriftKind, SeparableSde};
pub use validate::{validate_derivatives, CallbackReport, ValidationReport};

use crate::error::{Result, ScoreError};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// SDE model `dx = F(x) dt + σ(x) dB` with scalar `σ > 0`.
///
/// Implementations are immutable and shared across worker threads.
pub trait SystemModel: Send + Sync {
    fn dim(&self) -> usize;

    fn drift(&self, x: &Vector) -> Vector;

    /// `∇F(x)^T ν`
    fn drift_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector;

    fn drift_divergence(&self, x: &Vector) -> f64;

    fn drift_divergence_gradient(&self, x: &Vector) -> Vector;

    fn diffusion(&self, x: &Vector) -> f64;

    fn diffusion_gradient(&self, x: &Vector) -> Vector;

    /// `∇²σ(x) w`; the Hessian is symmetric.
    fn diffusion_hessian_apply(&self, x: &Vector, w: &Vector) -> Vector;

    fn diffusion_laplacian(&self, x: &Vector) -> f64;

    /// True iff `∇σ ≡ 0`.
    fn is_additive(&self) -> bool;

    fn name(&self) -> String;

    /// Dense `∇F(x)`, rows indexed by component of `F`. Built from `M`
    /// transpose applications.
    fn drift_jacobian(&self, x: &Vector) -> Matrix {
        let m = self.dim();
        let mut jac = Matrix::zeros(m, m);
        for i in 0..m {
            let row = self.drift_jacobian_transpose_apply(x, &unit(m, i));
            jac.row_mut(i).copy_from(&row.transpose());
        }
        jac
    }

    /// Dense `∇²σ(x)` recovered from `M` Hessian applications.
    fn diffusion_hessian(&self, x: &Vector) -> Matrix {
        let m = self.dim();
        let mut hess = Matrix::zeros(m, m);
        for j in 0..m {
            let col = self.diffusion_hessian_apply(x, &unit(m, j));
            hess.column_mut(j).copy_from(&col);
        }
        hess
    }
}

impl<T: SystemModel + ?Sized> SystemModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn drift(&self, x: &Vector) -> Vector {
        (**self).drift(x)
    }
    fn drift_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector {
        (**self).drift_jacobian_transpose_apply(x, nu)
    }
    fn drift_divergence(&self, x: &Vector) -> f64 {
        (**self).drift_divergence(x)
    }
    fn drift_divergence_gradient(&self, x: &Vector) -> Vector {
        (**self).drift_divergence_gradient(x)
    }
    fn diffusion(&self, x: &Vector) -> f64 {
        (**self).diffusion(x)
    }
    fn diffusion_gradient(&self, x: &Vector) -> Vector {
        (**self).diffusion_gradient(x)
    }
    fn diffusion_hessian_apply(&self, x: &Vector, w: &Vector) -> Vector {
        (**self).diffusion_hessian_apply(x, w)
    }
    fn diffusion_laplacian(&self, x: &Vector) -> f64 {
        (**self).diffusion_laplacian(x)
    }
    fn is_additive(&self) -> bool {
        (**self).is_additive()
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// When the `σ > 0` invariant is checked during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositivityCheck {
    /// Every diffusion evaluation.
    EveryEvaluation,
    /// Only the first step of each path.
    FirstStep,
}

impl Default for PositivityCheck {
    /// Every evaluation in debug and test builds, first step only otherwise.
    fn default() -> Self {
        if cfg!(debug_assertions) || cfg!(test) {
            PositivityCheck::EveryEvaluation
        } else {
            PositivityCheck::FirstStep
        }
    }
}

impl PositivityCheck {
    pub fn applies_at(self, step: usize) -> bool {
        match self {
            PositivityCheck::EveryEvaluation => true,
            PositivityCheck::FirstStep => step == 0,
        }
    }
}

/// Returns `σ` if it is finite and strictly positive.
pub fn checked_diffusion(value: f64, x: &Vector) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ScoreError::NonPositiveDiffusion { value, point: x.iter().copied().collect() })
    }
}

pub(crate) fn unit(m: usize, i: usize) -> Vector {
    let mut e = Vector::zeros(m);
    e[i] = 1.0;
    e
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(ScoreError::DimensionMismatch { expected, got })
    }
}
