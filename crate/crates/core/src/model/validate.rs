use std::fmt;

use super::{unit, Matrix, SystemModel, Vector};
use crate::error::{Result, ScoreError};

/// Relative tolerance for an analytic callback against central differences.
pub const DERIVATIVE_REL_TOL: f64 = 1e-6;
/// Absolute floor under the relative tolerance.
pub const DERIVATIVE_ABS_FLOOR: f64 = 1e-9;

/// Worst-case discrepancy of one derivative callback over all test points.
#[derive(Debug, Clone, PartialEq)]
pub struct CallbackReport {
    pub callback: &'static str,
    pub max_abs_error: f64,
    /// `|analytic - fd| / max(|fd|, floor/tol)`; compared against the relative tolerance.
    pub max_rel_error: f64,
    pub worst_point: Option<Vec<f64>>,
}

impl CallbackReport {
    fn new(callback: &'static str) -> Self {
        Self { callback, max_abs_error: 0.0, max_rel_error: 0.0, worst_point: None }
    }

    fn record(&mut self, analytic: f64, reference: f64, x: &Vector) {
        let abs = (analytic - reference).abs();
        let rel = abs / reference.abs().max(DERIVATIVE_ABS_FLOOR / DERIVATIVE_REL_TOL);
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel > self.max_rel_error || rel.is_nan() {
            self.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            self.worst_point = Some(x.iter().copied().collect());
        }
    }

    pub fn flagged(&self) -> bool {
        !(self.max_rel_error <= DERIVATIVE_REL_TOL)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub model: String,
    pub step: f64,
    pub n_points: usize,
    pub callbacks: Vec<CallbackReport>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.callbacks.iter().all(|c| !c.flagged())
    }

    pub fn flagged(&self) -> Vec<&'static str> {
        self.callbacks.iter().filter(|c| c.flagged()).map(|c| c.callback).collect()
    }

    pub fn get(&self, callback: &str) -> Option<&CallbackReport> {
        self.callbacks.iter().find(|c| c.callback == callback)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "derivative check for {} ({} points, step {:e})", self.model, self.n_points, self.step)?;
        for c in &self.callbacks {
            writeln!(
                f,
                "  {:<32} max_abs={:.3e} max_rel={:.3e} {}",
                c.callback,
                c.max_abs_error,
                c.max_rel_error,
                if c.flagged() { "FAIL" } else { "ok" }
            )?;
        }
        Ok(())
    }
}

fn finite_vec(callback: &'static str, v: Vector, x: &Vector) -> Result<Vector> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(v)
    } else {
        Err(ScoreError::NonFiniteModelOutput { callback, point: x.iter().copied().collect() })
    }
}

fn finite_scalar(callback: &'static str, v: f64, x: &Vector) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ScoreError::NonFiniteModelOutput { callback, point: x.iter().copied().collect() })
    }
}

/// Compares every analytic derivative callback of `model` against central
/// finite differences at `points`.
///
/// References: the drift Jacobian and `∇σ` are differenced from `F` and `σ`;
/// `∇div F` from the `div F` callback; `∇²σ` from the `∇σ` callback; `div F`
/// and `Δσ` are traces of the differenced matrices.
pub fn validate_derivatives(model: &dyn SystemModel, points: &[Vector], step: f64) -> Result<ValidationReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(ScoreError::InvalidModel(format!("finite-difference step must be > 0, got {step}")));
    }
    let m = model.dim();
    let mut jac_t = CallbackReport::new("drift_jacobian_transpose_apply");
    let mut div = CallbackReport::new("drift_divergence");
    let mut grad_div = CallbackReport::new("drift_divergence_gradient");
    let mut grad_sigma = CallbackReport::new("diffusion_gradient");
    let mut hess = CallbackReport::new("diffusion_hessian_apply");
    let mut lap = CallbackReport::new("diffusion_laplacian");

    for x in points {
        super::check_dim(m, x.len())?;
        if x.iter().any(|e| !e.is_finite()) {
            return Err(ScoreError::InvalidModel(format!("test point is not finite: {x:?}")));
        }
        finite_vec("drift", model.drift(x), x)?;
        finite_scalar("diffusion", model.diffusion(x), x)?;

        let mut jac_fd = Matrix::zeros(m, m);
        let mut hess_fd = Matrix::zeros(m, m);
        for j in 0..m {
            let e = unit(m, j);
            let xp = x + &e * step;
            let xm = x - &e * step;
            let dcol = (finite_vec("drift", model.drift(&xp), &xp)? - finite_vec("drift", model.drift(&xm), &xm)?)
                / (2.0 * step);
            jac_fd.column_mut(j).copy_from(&dcol);

            let dsig = (finite_scalar("diffusion", model.diffusion(&xp), &xp)?
                - finite_scalar("diffusion", model.diffusion(&xm), &xm)?)
                / (2.0 * step);
            grad_sigma.record(finite_vec("diffusion_gradient", model.diffusion_gradient(x), x)?[j], dsig, x);

            let ddiv = (finite_scalar("drift_divergence", model.drift_divergence(&xp), &xp)?
                - finite_scalar("drift_divergence", model.drift_divergence(&xm), &xm)?)
                / (2.0 * step);
            grad_div.record(
                finite_vec("drift_divergence_gradient", model.drift_divergence_gradient(x), x)?[j],
                ddiv,
                x,
            );

            let hcol = (finite_vec("diffusion_gradient", model.diffusion_gradient(&xp), &xp)?
                - finite_vec("diffusion_gradient", model.diffusion_gradient(&xm), &xm)?)
                / (2.0 * step);
            hess_fd.column_mut(j).copy_from(&hcol);
        }

        for i in 0..m {
            let row =
                finite_vec("drift_jacobian_transpose_apply", model.drift_jacobian_transpose_apply(x, &unit(m, i)), x)?;
            for j in 0..m {
                jac_t.record(row[j], jac_fd[(i, j)], x);
            }
            let col = finite_vec("diffusion_hessian_apply", model.diffusion_hessian_apply(x, &unit(m, i)), x)?;
            for k in 0..m {
                hess.record(col[k], hess_fd[(k, i)], x);
            }
        }
        div.record(finite_scalar("drift_divergence", model.drift_divergence(x), x)?, jac_fd.trace(), x);
        lap.record(finite_scalar("diffusion_laplacian", model.diffusion_laplacian(x), x)?, hess_fd.trace(), x);
    }

    Ok(ValidationReport {
        model: model.name(),
        step,
        n_points: points.len(),
        callbacks: vec![jac_t, div, grad_div, grad_sigma, hess, lap],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionKind, DriftKind, SeparableSde};

    #[test]
    fn linear_drift_has_tiny_errors() {
        let model = SeparableSde::linear_ou(1, 1.0, 1.0);
        let report = validate_derivatives(&model, &[Vector::from_element(1, 0.7)], 1e-5).unwrap();
        for c in &report.callbacks {
            assert!(c.max_abs_error <= 1e-8, "{}: {}", c.callback, c.max_abs_error);
        }
        assert!(report.passed());
    }

    /// Wraps a model and doubles its `∇div F`.
    struct CorruptedGradDiv(SeparableSde);

    impl SystemModel for CorruptedGradDiv {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn drift(&self, x: &Vector) -> Vector {
            self.0.drift(x)
        }
        fn drift_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector {
            self.0.drift_jacobian_transpose_apply(x, nu)
        }
        fn drift_divergence(&self, x: &Vector) -> f64 {
            self.0.drift_divergence(x)
        }
        fn drift_divergence_gradient(&self, x: &Vector) -> Vector {
            self.0.drift_divergence_gradient(x) * 2.0
        }
        fn diffusion(&self, x: &Vector) -> f64 {
            self.0.diffusion(x)
        }
        fn diffusion_gradient(&self, x: &Vector) -> Vector {
            self.0.diffusion_gradient(x)
        }
        fn diffusion_hessian_apply(&self, x: &Vector, w: &Vector) -> Vector {
            self.0.diffusion_hessian_apply(x, w)
        }
        fn diffusion_laplacian(&self, x: &Vector) -> f64 {
            self.0.diffusion_laplacian(x)
        }
        fn is_additive(&self) -> bool {
            self.0.is_additive()
        }
        fn name(&self) -> String {
            "corrupted".into()
        }
    }

    #[test]
    fn corrupted_divergence_gradient_is_flagged_alone() {
        let model = CorruptedGradDiv(SeparableSde::new(2, DriftKind::Cubic, DiffusionKind::Bump { base: 0.5 }));
        let points = vec![Vector::from_vec(vec![0.3, -1.1]), Vector::from_vec(vec![1.4, 0.2])];
        let report = validate_derivatives(&model, &points, 1e-5).unwrap();
        assert_eq!(report.flagged(), vec!["drift_divergence_gradient"]);
    }

    struct Exploding;
    impl SystemModel for Exploding {
        fn dim(&self) -> usize {
            1
        }
        fn drift(&self, x: &Vector) -> Vector {
            x.map(|v| 1.0 / v)
        }
        fn drift_jacobian_transpose_apply(&self, x: &Vector, nu: &Vector) -> Vector {
            x.zip_map(nu, |v, n| -n / (v * v))
        }
        fn drift_divergence(&self, x: &Vector) -> f64 {
            -1.0 / (x[0] * x[0])
        }
        fn drift_divergence_gradient(&self, x: &Vector) -> Vector {
            x.map(|v| 2.0 / (v * v * v))
        }
        fn diffusion(&self, _x: &Vector) -> f64 {
            1.0
        }
        fn diffusion_gradient(&self, _x: &Vector) -> Vector {
            Vector::zeros(1)
        }
        fn diffusion_hessian_apply(&self, _x: &Vector, _w: &Vector) -> Vector {
            Vector::zeros(1)
        }
        fn diffusion_laplacian(&self, _x: &Vector) -> f64 {
            0.0
        }
        fn is_additive(&self) -> bool {
            true
        }
        fn name(&self) -> String {
            "exploding".into()
        }
    }

    #[test]
    fn non_finite_output_names_callback() {
        let err = validate_derivatives(&Exploding, &[Vector::from_element(1, 0.0)], 1e-5).unwrap_err();
        match err {
            ScoreError::NonFiniteModelOutput { callback, point } => {
                assert_eq!(callback, "drift");
                assert_eq!(point, vec![0.0]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
