use super::{SystemModel, Vector};

/// Componentwise drift `F^i(x) = φ(x^i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftKind {
    /// `F(x) = -a x`
    Linear { rate: f64 },
    /// `F(x) = -x³`
    Cubic,
    /// `F ≡ 0`
    Zero,
}

/// Radially symmetric scalar diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionKind {
    /// `σ ≡ s`
    Constant(f64),
    /// `σ(x) = base + exp(-|x|²)`; in one dimension this is `0.5 + e^{-x²}` for base 0.5.
    Bump { base: f64 },
}

/// Diagonal drift with a scalar diffusion field, in any dimension.
///
/// Covers the linear OU benchmark (`F = -a x`, constant `σ`) and the
/// cubic-drift system with constant or bump-shaped diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableSde {
    dim: usize,
    drift: DriftKind,
    diffusion: DiffusionKind,
}

impl SeparableSde {
    pub fn new(dim: usize, drift: DriftKind, diffusion: DiffusionKind) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self { dim, drift, diffusion }
    }

    pub fn linear_ou(dim: usize, rate: f64, sigma: f64) -> Self {
        Self::new(dim, DriftKind::Linear { rate }, DiffusionKind::Constant(sigma))
    }

    pub fn drift_kind(&self) -> DriftKind {
        self.drift
    }

    pub fn diffusion_kind(&self) -> DiffusionKind {
        self.diffusion
    }

    fn drift_1d(&self, x: f64) -> f64 {
        match self.drift {
            DriftKind::Linear { rate } => -rate * x,
            DriftKind::Cubic => -x * x * x,
            DriftKind::Zero => 0.0,
        }
    }

    fn drift_prime(&self, x: f64) -> f64 {
        match self.drift {
            DriftKind::Linear { rate } => -rate,
            DriftKind::Cubic => -3.0 * x * x,
            DriftKind::Zero => 0.0,
        }
    }

    fn drift_second(&self, x: f64) -> f64 {
        match self.drift {
            DriftKind::Cubic => -6.0 * x,
            _ => 0.0,
        }
    }

    fn bump(x: &Vector) -> f64 {
        (-x.norm_squared()).exp()
    }
}

impl SystemModel for SeparableSde {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &Vector) -> Vector {
        x.map(|xi| self.drift_1d(xi))
    }

    fn drift_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector {
        x.zip_map(nu, |xi, ni| self.drift_prime(xi) * ni)
    }

    fn drift_divergence(&self, x: &Vector) -> f64 {
        x.iter().map(|&xi| self.drift_prime(xi)).sum()
    }

    fn drift_divergence_gradient(&self, x: &Vector) -> Vector {
        x.map(|xi| self.drift_second(xi))
    }

    fn diffusion(&self, x: &Vector) -> f64 {
        match self.diffusion {
            DiffusionKind::Constant(s) => s,
            DiffusionKind::Bump { base } => base + Self::bump(x),
        }
    }

    fn diffusion_gradient(&self, x: &Vector) -> Vector {
        match self.diffusion {
            DiffusionKind::Constant(_) => Vector::zeros(self.dim),
            DiffusionKind::Bump { .. } => x * (-2.0 * Self::bump(x)),
        }
    }

    // ∇²e^{-|x|²} = e^{-|x|²}(4 x x^T - 2 I)
    fn diffusion_hessian_apply(&self, x: &Vector, w: &Vector) -> Vector {
        match self.diffusion {
            DiffusionKind::Constant(_) => Vector::zeros(self.dim),
            DiffusionKind::Bump { .. } => {
                let g = Self::bump(x);
                (x * (4.0 * x.dot(w)) - w * 2.0) * g
            }
        }
    }

    fn diffusion_laplacian(&self, x: &Vector) -> f64 {
        match self.diffusion {
            DiffusionKind::Constant(_) => 0.0,
            DiffusionKind::Bump { .. } => Self::bump(x) * (4.0 * x.norm_squared() - 2.0 * self.dim as f64),
        }
    }

    fn is_additive(&self) -> bool {
        matches!(self.diffusion, DiffusionKind::Constant(_))
    }

    fn name(&self) -> String {
        let drift = match self.drift {
            DriftKind::Linear { rate } => format!("linear(a={rate})"),
            DriftKind::Cubic => "cubic".to_string(),
            DriftKind::Zero => "zero".to_string(),
        };
        let diffusion = match self.diffusion {
            DiffusionKind::Constant(s) => format!("const({s})"),
            DiffusionKind::Bump { base } => format!("bump({base})"),
        };
        format!("separable[M={}, {drift}, {diffusion}]", self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bump_derivatives_at_origin() {
        let model = SeparableSde::new(1, DriftKind::Cubic, DiffusionKind::Bump { base: 0.5 });
        let x = Vector::from_element(1, 0.0);
        assert_eq!(model.diffusion(&x), 1.5);
        assert_eq!(model.diffusion_gradient(&x)[0], 0.0);
        assert_eq!(model.diffusion_laplacian(&x), -2.0);
    }

    #[test]
    fn cubic_one_dimensional_derivatives() {
        let model = SeparableSde::new(1, DriftKind::Cubic, DiffusionKind::Constant(1.0));
        let x = Vector::from_element(1, 1.5);
        assert_relative_eq!(model.drift(&x)[0], -3.375);
        assert_relative_eq!(model.drift_divergence(&x), -6.75);
        assert_relative_eq!(model.drift_divergence_gradient(&x)[0], -9.0);
    }
}
