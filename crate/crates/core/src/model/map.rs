use std::fmt;
use std::sync::Arc;

use super::{Matrix, SystemModel, Vector};

/// Deterministic part `f` and diffusion `σ` of a chain `x_{n+1} = f(x_n) + σ(x_n) b_n`.
pub trait StepMap: Send + Sync {
    fn dim(&self) -> usize;

    fn map(&self, x: &Vector) -> Vector;

    /// `∇f(x)`
    fn map_jacobian(&self, x: &Vector) -> Matrix;

    /// `∇f(x)^T ν`
    fn map_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector {
        self.map_jacobian(x).tr_mul(nu)
    }

    fn diffusion(&self, x: &Vector) -> f64;

    fn diffusion_gradient(&self, x: &Vector) -> Vector;

    fn is_additive(&self) -> bool;

    /// `(f''(x), σ''(x))` for one-dimensional maps with closed-form second
    /// derivatives; `None` otherwise.
    fn scalar_second_derivatives(&self, x: f64) -> Option<(f64, f64)>;
}

/// Euler embedding `f(x) = x + F(x) Δt` of an SDE model.
pub struct EulerMap<'a, M: SystemModel + ?Sized> {
    model: &'a M,
    dt: f64,
}

impl<'a, M: SystemModel + ?Sized> EulerMap<'a, M> {
    pub fn new(model: &'a M, dt: f64) -> Self {
        Self { model, dt }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> &M {
        self.model
    }
}

impl<M: SystemModel + ?Sized> StepMap for EulerMap<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn map(&self, x: &Vector) -> Vector {
        x + self.model.drift(x) * self.dt
    }

    fn map_jacobian(&self, x: &Vector) -> Matrix {
        let m = self.dim();
        Matrix::identity(m, m) + self.model.drift_jacobian(x) * self.dt
    }

    fn map_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector {
        nu + self.model.drift_jacobian_transpose_apply(x, nu) * self.dt
    }

    fn diffusion(&self, x: &Vector) -> f64 {
        self.model.diffusion(x)
    }

    fn diffusion_gradient(&self, x: &Vector) -> Vector {
        self.model.diffusion_gradient(x)
    }

    fn is_additive(&self) -> bool {
        self.model.is_additive()
    }

    // In one dimension F' = div F, F'' = ∇div F and σ'' = Δσ.
    fn scalar_second_derivatives(&self, x: f64) -> Option<(f64, f64)> {
        if self.dim() != 1 {
            return None;
        }
        let xv = Vector::from_element(1, x);
        let f2 = self.model.drift_divergence_gradient(&xv)[0] * self.dt;
        let s2 = self.model.diffusion_laplacian(&xv);
        Some((f2, s2))
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One-dimensional chain given by closed-form `f, f', f'', σ, σ', σ''`.
#[derive(Clone)]
pub struct ScalarMap {
    f: ScalarFn,
    df: ScalarFn,
    d2f: ScalarFn,
    sigma: ScalarFn,
    dsigma: ScalarFn,
    d2sigma: ScalarFn,
    additive: bool,
}

impl fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarMap").field("additive", &self.additive).finish_non_exhaustive()
    }
}

impl ScalarMap {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dsigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
            sigma: Arc::new(sigma),
            dsigma: Arc::new(dsigma),
            d2sigma: Arc::new(d2sigma),
            additive: false,
        }
    }

    /// `f(x) = slope · x`, constant `σ`.
    pub fn linear(slope: f64, sigma: f64) -> Self {
        let mut map = Self::new(move |x| slope * x, move |_| slope, |_| 0.0, move |_| sigma, |_| 0.0, |_| 0.0);
        map.additive = true;
        map
    }

    /// Marks the map as having constant diffusion.
    pub fn with_additive_noise(mut self) -> Self {
        self.additive = true;
        self
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn slope(&self, x: f64) -> f64 {
        (self.df)(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    pub fn sigma_slope(&self, x: f64) -> f64 {
        (self.dsigma)(x)
    }
}

impl StepMap for ScalarMap {
    fn dim(&self) -> usize {
        1
    }

    fn map(&self, x: &Vector) -> Vector {
        Vector::from_element(1, (self.f)(x[0]))
    }

    fn map_jacobian(&self, x: &Vector) -> Matrix {
        Matrix::from_element(1, 1, (self.df)(x[0]))
    }

    fn map_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector {
        Vector::from_element(1, (self.df)(x[0]) * nu[0])
    }

    fn diffusion(&self, x: &Vector) -> f64 {
        (self.sigma)(x[0])
    }

    fn diffusion_gradient(&self, x: &Vector) -> Vector {
        Vector::from_element(1, (self.dsigma)(x[0]))
    }

    fn is_additive(&self) -> bool {
        self.additive
    }

    fn scalar_second_derivatives(&self, x: f64) -> Option<(f64, f64)> {
        Some(((self.d2f)(x), (self.d2sigma)(x)))
    }
}
