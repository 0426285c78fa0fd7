use super::{SystemModel, Vector};
use crate::error::{Result, ScoreError};

const FORCING: f64 = 8.0;

/// Cyclic Lorenz-96 with quadratic damping and state-dependent noise:
///
/// `dx^i = ((x^{i+1} - x^{i-2}) x^{i-1} - x^i + 8 - d (x^i)²) dt + (c + e^{-|x|²/2}) dB^i`
#[derive(Debug, Clone, PartialEq)]
pub struct Lorenz96 {
    dim: usize,
    damping: f64,
    base_diffusion: f64,
}

/// The 40-dimensional configuration; `damping = 0.01`, `base_diffusion = 2`
/// give the standard noisy benchmark.
pub fn lorenz96_model(damping: f64, base_diffusion: f64) -> Lorenz96 {
    Lorenz96::new(40, damping, base_diffusion).expect("M = 40 is a valid dimension")
}

impl Lorenz96 {
    pub fn new(dim: usize, damping: f64, base_diffusion: f64) -> Result<Self> {
        if dim < 4 {
            return Err(ScoreError::InvalidModel(format!("Lorenz-96 needs M >= 4 for its cyclic stencil, got {dim}")));
        }
        if !(damping >= 0.0) {
            return Err(ScoreError::InvalidModel(format!("damping must be >= 0, got {damping}")));
        }
        if !(base_diffusion >= 0.0) {
            return Err(ScoreError::InvalidModel(format!("base diffusion must be >= 0, got {base_diffusion}")));
        }
        Ok(Self { dim, damping, base_diffusion })
    }

    #[inline]
    fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.dim as isize) as usize
    }

    fn gaussian_factor(x: &Vector) -> f64 {
        (-0.5 * x.norm_squared()).exp()
    }
}

impl SystemModel for Lorenz96 {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &Vector) -> Vector {
        Vector::from_fn(self.dim, |i, _| {
            let i = i as isize;
            let xp1 = x[self.wrap(i + 1)];
            let xm1 = x[self.wrap(i - 1)];
            let xm2 = x[self.wrap(i - 2)];
            let xi = x[i as usize];
            (xp1 - xm2) * xm1 - xi + FORCING - self.damping * xi * xi
        })
    }

    fn drift_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        for i in 0..self.dim {
            let ii = i as isize;
            let (ip1, im1, im2) = (self.wrap(ii + 1), self.wrap(ii - 1), self.wrap(ii - 2));
            let n = nu[i];
            out[ip1] += x[im1] * n;
            out[im2] -= x[im1] * n;
            out[im1] += (x[ip1] - x[im2]) * n;
            out[i] += (-1.0 - 2.0 * self.damping * x[i]) * n;
        }
        out
    }

    fn drift_divergence(&self, x: &Vector) -> f64 {
        -(self.dim as f64) - 2.0 * self.damping * x.sum()
    }

    fn drift_divergence_gradient(&self, _x: &Vector) -> Vector {
        Vector::from_element(self.dim, -2.0 * self.damping)
    }

    fn diffusion(&self, x: &Vector) -> f64 {
        self.base_diffusion + Self::gaussian_factor(x)
    }

    fn diffusion_gradient(&self, x: &Vector) -> Vector {
        x * (-Self::gaussian_factor(x))
    }

    fn diffusion_hessian_apply(&self, x: &Vector, w: &Vector) -> Vector {
        let g = Self::gaussian_factor(x);
        (x * x.dot(w) - w) * g
    }

    fn diffusion_laplacian(&self, x: &Vector) -> f64 {
        Self::gaussian_factor(x) * (x.norm_squared() - self.dim as f64)
    }

    fn is_additive(&self) -> bool {
        false
    }

    fn name(&self) -> String {
        format!("lorenz96[M={}, damping={}, base_diffusion={}]", self.dim, self.damping, self.base_diffusion)
    }
}
