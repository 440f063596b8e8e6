//! Lie brackets of vector fields, the exact averaged (Lie bracket system)
//! right-hand side, and the first-order input/output increment predictor.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EscError, Result};
use crate::model::{b0_of, ChannelSpec, EscModel};

type FieldEval = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type FieldJac = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A time-varying vector field on ℝⁿ with an optional analytic Jacobian.
#[derive(Clone)]
pub struct VectorField {
    pub dim: usize,
    eval: FieldEval,
    jacobian: Option<FieldJac>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl VectorField {
    pub fn new(dim: usize, eval: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self { dim, eval: Arc::new(eval), jacobian: None }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(t, x)
    }

    /// Analytic Jacobian when present, else central differences with step
    /// `1e-6·(1+|x_k|)` per column.
    pub fn jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.jacobian {
            return j(t, x);
        }
        self.fd_jacobian(t, x)
    }

    pub fn fd_jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.clone();
        for k in 0..n {
            let h = 1e-6 * (1.0 + x[k].abs());
            xp[k] = x[k] + h;
            let fp = self.eval(t, &xp);
            xp[k] = x[k] - h;
            let fm = self.eval(t, &xp);
            xp[k] = x[k];
            jac.set_column(k, &((fp - fm) / (2.0 * h)));
        }
        jac
    }
}

/// `[b_i, b_j](t, x) = (∂b_j/∂x)·b_i − (∂b_i/∂x)·b_j`.
pub fn lie_bracket(b_i: &VectorField, b_j: &VectorField, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if b_i.dim != b_j.dim || b_i.dim != x.len() {
        return Err(EscError::Config(format!(
            "lie bracket dimension mismatch: {} vs {} at a point of dimension {}",
            b_i.dim,
            b_j.dim,
            x.len()
        )));
    }
    let vi = b_i.eval(t, x);
    let vj = b_j.eval(t, x);
    Ok(b_j.jacobian(t, x) * vi - b_i.jacobian(t, x) * vj)
}

/// Full vector fields `b_{s i}(f(x))·e_i` of channel `i` (`s` = 1 or 2) of a
/// diagonal-form system, with finite-difference Jacobians.
pub fn channel_vector_field(model: &EscModel, channel: usize, s: u8) -> VectorField {
    let n = model.n();
    let obj = model.spec.objective.clone();
    let ch = model.spec.channels[channel].clone();
    VectorField::new(n, move |_t, x| {
        let f = obj.seek_value(x.as_slice());
        let b = if s == 1 { ch.b1.eval(f) } else { ch.b2.eval(f) };
        let mut v = DVector::zeros(n);
        v[channel] = b;
        v
    })
}

/// Exact averaged right-hand side with its ingredients kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbsRhs {
    pub j_exact: Vec<f64>,
    /// Physical weights `ν̂ᵢ·aᵢ²`.
    pub nu: Vec<f64>,
    /// Oracle gradient of the seek value.
    pub grad: Vec<f64>,
    pub b0: Vec<f64>,
}

impl LbsRhs {
    /// Recompute `−ν·∂f/∂zᵢ·b₀ᵢ` from the stored parts.
    pub fn recompute(&self) -> Vec<f64> {
        (0..self.j_exact.len()).map(|i| -self.nu[i] * self.grad[i] * self.b0[i]).collect()
    }
}

/// `Jᵢ = −ν̂ᵢ·aᵢ²·∂s/∂zᵢ·b₀ᵢ(s)` using the objective's oracle gradient.
pub fn lbs_rhs_exact(model: &EscModel, z: &[f64], a: &[f64]) -> Result<LbsRhs> {
    let n = model.n();
    let obj = &model.spec.objective;
    let mut grad = vec![0.0; n];
    if !obj.oracle_gradient(z, &mut grad) {
        return Err(EscError::Capability("objective has no oracle gradient".into()));
    }
    let sign = obj.seek_sign();
    grad.iter_mut().for_each(|g| *g *= sign);
    let s = obj.seek_value(z);
    let mut out = LbsRhs { j_exact: vec![0.0; n], nu: vec![0.0; n], grad, b0: vec![0.0; n] };
    for (i, ch) in model.spec.channels.iter().enumerate() {
        out.nu[i] = model.nu_hat[i] * a[i] * a[i];
        out.b0[i] = b0_of(ch, s)?;
        out.j_exact[i] = -out.nu[i] * out.grad[i] * out.b0[i];
    }
    Ok(out)
}

/// Allocation-free variant of [`lbs_rhs_exact`] for inner loops.
pub(crate) fn lbs_rhs_into(model: &EscModel, z: &[f64], a: &[f64], grad: &mut [f64], out: &mut [f64]) -> Result<()> {
    let obj = &model.spec.objective;
    if !obj.oracle_gradient(z, grad) {
        return Err(EscError::Capability("objective has no oracle gradient".into()));
    }
    let sign = obj.seek_sign();
    let s = obj.seek_value(z);
    for (i, ch) in model.spec.channels.iter().enumerate() {
        out[i] = -model.nu_hat[i] * a[i] * a[i] * sign * grad[i] * b0_of(ch, s)?;
    }
    Ok(())
}

/// First-order Chen–Fliess increment
/// `f(t₂) ≈ f(t₁) + Σᵢ ∂f/∂xᵢ·(b₁ᵢ(f₁)·U₁ᵢ + b₂ᵢ(f₁)·U₂ᵢ)`.
pub fn chen_fliess_predict(f_t1: f64, grad_t1: &[f64], channels: &[ChannelSpec], u1: &[f64], u2: &[f64]) -> Result<f64> {
    let n = channels.len();
    if grad_t1.len() != n || u1.len() != n || u2.len() != n {
        return Err(EscError::Input("chen_fliess_predict: length mismatch".into()));
    }
    let inc: f64 = channels
        .iter()
        .enumerate()
        .map(|(i, ch)| grad_t1[i] * (ch.b1.eval(f_t1) * u1[i] + ch.b2.eval(f_t1) * u2[i]))
        .sum();
    let pred = f_t1 + inc;
    if pred.is_finite() {
        Ok(pred)
    } else {
        Err(EscError::Input("chen_fliess_predict: non-finite inputs".into()))
    }
}
