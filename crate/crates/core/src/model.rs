//! Objective maps, channel vector-field elements and full ESC system
//! descriptions.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dither::{nu_coefficient, DitherSignal};
use crate::error::{EscError, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A scalar function of the objective value with an optional analytic
/// derivative. Only usable from code; configs cannot express it.
#[derive(Clone)]
pub struct CustomScalar {
    pub name: String,
    pub value: ScalarFn,
    pub derivative: Option<ScalarFn>,
}

impl fmt::Debug for CustomScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomScalar").field("name", &self.name).finish_non_exhaustive()
    }
}

impl PartialEq for CustomScalar {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.value, &other.value)
    }
}

/// Vector-field element `b(f)` of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScalarMap {
    /// `gain·f + offset`
    Affine { gain: f64, offset: f64 },
    /// `scale·cos(k·f)`
    Cos { k: f64, scale: f64 },
    /// `scale·sin(k·f)`
    Sin { k: f64, scale: f64 },
    #[serde(skip)]
    Custom(CustomScalar),
}

impl ScalarMap {
    pub fn constant(c: f64) -> Self {
        ScalarMap::Affine { gain: 0.0, offset: c }
    }

    pub fn linear(gain: f64) -> Self {
        ScalarMap::Affine { gain, offset: 0.0 }
    }

    #[inline]
    pub fn eval(&self, f: f64) -> f64 {
        match self {
            ScalarMap::Affine { gain, offset } => gain * f + offset,
            ScalarMap::Cos { k, scale } => scale * (k * f).cos(),
            ScalarMap::Sin { k, scale } => scale * (k * f).sin(),
            ScalarMap::Custom(c) => (c.value)(f),
        }
    }

    pub fn analytic_derivative(&self, f: f64) -> Option<f64> {
        match self {
            ScalarMap::Affine { gain, .. } => Some(*gain),
            ScalarMap::Cos { k, scale } => Some(-scale * k * (k * f).sin()),
            ScalarMap::Sin { k, scale } => Some(scale * k * (k * f).cos()),
            ScalarMap::Custom(c) => c.derivative.as_ref().map(|d| d(f)),
        }
    }

    /// Central difference with step `max(1e-6, 1e-6·|f|)`.
    pub fn fd_derivative(&self, f: f64) -> f64 {
        let h = (1e-6 * f.abs()).max(1e-6);
        (self.eval(f + h) - self.eval(f - h)) / (2.0 * h)
    }

    pub fn derivative(&self, f: f64) -> f64 {
        self.analytic_derivative(f).unwrap_or_else(|| self.fd_derivative(f))
    }
}

/// Whether the isolated extremum is a minimum or a maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    #[default]
    Min,
    Max,
}

#[derive(Clone)]
pub struct CustomObjective {
    pub name: String,
    pub value: FieldFn,
    pub gradient: Option<GradFn>,
}

impl fmt::Debug for CustomObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomObjective").field("name", &self.name).finish_non_exhaustive()
    }
}

impl PartialEq for CustomObjective {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.value, &other.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectiveForm {
    /// `offset + Σ weights[i]·(x[i] − center[i])²`
    Quadratic { center: Vec<f64>, weights: Vec<f64>, offset: f64 },
    #[serde(skip)]
    Custom(CustomObjective),
}

/// The objective `f: ℝⁿ → ℝ` together with its declared extremum and
/// domain box.
///
/// The analytic gradient is an oracle: the ESC loop never touches it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMap {
    pub dimension: usize,
    pub form: ObjectiveForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_star: Option<f64>,
    #[serde(default)]
    pub kind: ExtremumKind,
    /// Axis-aligned box, one `(lo, hi)` per coordinate.
    pub domain: Vec<(f64, f64)>,
}

impl ObjectiveMap {
    pub fn quadratic(center: Vec<f64>, weights: Vec<f64>, offset: f64, domain: Vec<(f64, f64)>) -> Self {
        let n = center.len();
        let kind = if weights.iter().all(|w| *w < 0.0) { ExtremumKind::Max } else { ExtremumKind::Min };
        Self {
            dimension: n,
            x_star: Some(center.clone()),
            f_star: Some(offset),
            form: ObjectiveForm::Quadratic { center, weights, offset },
            kind,
            domain,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.form {
            ObjectiveForm::Quadratic { center, weights, offset } => {
                offset
                    + x.iter()
                        .zip(center)
                        .zip(weights)
                        .map(|((xi, ci), wi)| wi * (xi - ci) * (xi - ci))
                        .sum::<f64>()
            }
            ObjectiveForm::Custom(c) => (c.value)(x),
        }
    }

    pub fn has_oracle_gradient(&self) -> bool {
        match &self.form {
            ObjectiveForm::Quadratic { .. } => true,
            ObjectiveForm::Custom(c) => c.gradient.is_some(),
        }
    }

    /// Analytic gradient, if this objective carries one.
    pub fn oracle_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.form {
            ObjectiveForm::Quadratic { center, weights, .. } => {
                for i in 0..out.len() {
                    out[i] = 2.0 * weights[i] * (x[i] - center[i]);
                }
                true
            }
            ObjectiveForm::Custom(c) => match &c.gradient {
                Some(g) => {
                    g(x, out);
                    true
                }
                None => false,
            },
        }
    }

    /// `+1` when minimizing, `−1` when maximizing. The ESC always descends
    /// on `sign·f`.
    pub fn seek_sign(&self) -> f64 {
        match self.kind {
            ExtremumKind::Min => 1.0,
            ExtremumKind::Max => -1.0,
        }
    }

    /// The value the ESC loop measures and feeds to its vector fields.
    #[inline]
    pub fn seek_value(&self, x: &[f64]) -> f64 {
        self.seek_sign() * self.eval(x)
    }

    /// Length of the domain box diagonal.
    pub fn domain_diagonal(&self) -> f64 {
        self.domain.iter().map(|(lo, hi)| (hi - lo) * (hi - lo)).sum::<f64>().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dimension;
        if n == 0 {
            return Err(EscError::Config("objective dimension must be positive".into()));
        }
        if self.domain.len() != n {
            return Err(EscError::Config(format!("domain box has {} intervals for dimension {n}", self.domain.len())));
        }
        if self.domain.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(EscError::Config("domain box intervals must be finite with lo < hi".into()));
        }
        if let ObjectiveForm::Quadratic { center, weights, offset } = &self.form {
            if center.len() != n || weights.len() != n || !offset.is_finite() {
                return Err(EscError::Config("quadratic objective dimensions do not match".into()));
            }
        }
        if let Some(xs) = &self.x_star {
            if xs.len() != n {
                return Err(EscError::Config("x_star has wrong dimension".into()));
            }
            let mut g = vec![0.0; n];
            if self.oracle_gradient(xs, &mut g) {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    return Err(EscError::Config(format!("gradient does not vanish at x_star (|∇f| = {norm:e})")));
                }
            }
        }
        // finite on a coarse grid over the box
        for p in box_grid(&self.domain, 5) {
            if !self.eval(&p).is_finite() {
                return Err(EscError::Config(format!("objective not finite at {p:?}")));
            }
        }
        Ok(())
    }
}

/// Points of a regular grid with `per_axis` nodes per axis (capped at 4096
/// points overall).
pub fn box_grid(domain: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let n = domain.len();
    let per_axis = per_axis.max(2);
    let per_axis = per_axis.min((4096_f64.powf(1.0 / n.max(1) as f64)).floor().max(2.0) as usize);
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut k| {
            domain
                .iter()
                .map(|(lo, hi)| {
                    let j = k % per_axis;
                    k /= per_axis;
                    lo + (hi - lo) * j as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// One coordinate channel `ẋᵢ = b₁ᵢ(f)·u₁ᵢ + b₂ᵢ(f)·u₂ᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub b1: ScalarMap,
    pub b2: ScalarMap,
    /// Indices into [`EscSystemSpec::dithers`] for `(û₁ᵢ, û₂ᵢ)`.
    pub dither_pair: (usize, usize),
}

/// `b₀ = b₂·db₁/df − b₁·db₂/df`.
pub fn b0_of(channel: &ChannelSpec, f_value: f64) -> Result<f64> {
    let b0 = channel.b2.eval(f_value) * channel.b1.derivative(f_value)
        - channel.b1.eval(f_value) * channel.b2.derivative(f_value);
    if b0.is_finite() {
        Ok(b0)
    } else {
        Err(EscError::Evaluation { f: f_value, what: "b0 is not finite".into() })
    }
}

/// [`b0_of`] forcing the finite-difference route for both derivatives.
pub fn b0_of_fd(channel: &ChannelSpec, f_value: f64) -> Result<f64> {
    let b0 = channel.b2.eval(f_value) * channel.b1.fd_derivative(f_value)
        - channel.b1.eval(f_value) * channel.b2.fd_derivative(f_value);
    if b0.is_finite() {
        Ok(b0)
    } else {
        Err(EscError::Evaluation { f: f_value, what: "b0 is not finite".into() })
    }
}

/// Full description of an n-channel control-affine ESC instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscSystemSpec {
    pub objective: ObjectiveMap,
    pub channels: Vec<ChannelSpec>,
    pub dithers: Vec<DitherSignal>,
    /// Dither frequency, rad/s.
    pub omega: f64,
    pub a0: Vec<f64>,
    pub lambda: Vec<f64>,
    pub x0: Vec<f64>,
    pub horizon: f64,
    /// Integration step; defaults to 64 steps per `2π/ω`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl EscSystemSpec {
    pub fn n(&self) -> usize {
        self.objective.dimension
    }

    pub fn default_dt(omega: f64) -> f64 {
        (TAU / omega) / 64.0
    }

    pub fn step(&self) -> f64 {
        self.dt.unwrap_or_else(|| Self::default_dt(self.omega))
    }

    /// Dither period of channel `i` in seconds.
    pub fn channel_period(&self, i: usize) -> f64 {
        self.dithers[self.channels[i].dither_pair.0].period / self.omega
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        let n = self.n();
        let cfg = |m: String| Err(EscError::Config(m));
        if self.channels.len() != n {
            return cfg(format!("{} channels for dimension {n}", self.channels.len()));
        }
        for (name, v) in [("a0", &self.a0), ("lambda", &self.lambda), ("x0", &self.x0)] {
            if v.len() != n {
                return cfg(format!("{name} has length {} but dimension is {n}", v.len()));
            }
            if v.iter().any(|e| !e.is_finite()) {
                return cfg(format!("{name} has non-finite entries"));
            }
        }
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return cfg(format!("omega must be positive, got {}", self.omega));
        }
        if self.lambda.iter().any(|l| *l <= 0.0) {
            return cfg("lambda must be positive".into());
        }
        if self.a0.iter().any(|a| *a <= 0.0) {
            return cfg("a0 must be positive".into());
        }
        let dt = self.step();
        if !(dt.is_finite() && dt > 0.0) {
            return cfg(format!("dt must be positive, got {dt}"));
        }
        if !(self.horizon > dt) {
            return cfg(format!("horizon {} must exceed dt {dt}", self.horizon));
        }
        for d in &self.dithers {
            d.validate()?;
        }
        for (i, ch) in self.channels.iter().enumerate() {
            let (j1, j2) = ch.dither_pair;
            if j1 >= self.dithers.len() || j2 >= self.dithers.len() {
                return cfg(format!("channel {i} references a missing dither"));
            }
            let (d1, d2) = (&self.dithers[j1], &self.dithers[j2]);
            if (d1.period - d2.period).abs() > 1e-12 * d1.period {
                return cfg(format!("channel {i} dither pair has mismatched periods"));
            }
            let resolve = (d1.period / self.omega) / 32.0;
            if dt > resolve * (1.0 + 1e-12) {
                return cfg(format!("dt = {dt} does not resolve channel {i}'s dither (needs ≤ {resolve})"));
            }
        }
        Ok(())
    }
}

/// A validated system with per-channel averaging weights cached.
#[derive(Debug, Clone)]
pub struct EscModel {
    pub spec: EscSystemSpec,
    /// `ν̂_{2i,1i}` for each channel at unit amplitude.
    pub nu_hat: Vec<f64>,
    pub dt: f64,
}

impl EscModel {
    pub fn compile(spec: &EscSystemSpec) -> Result<Self> {
        spec.validate()?;
        let nu_hat = spec
            .channels
            .iter()
            .map(|ch| nu_coefficient(&spec.dithers[ch.dither_pair.1], &spec.dithers[ch.dither_pair.0]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dt: spec.step(), spec: spec.clone(), nu_hat })
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    /// Unit-amplitude dither values `(û₁ᵢ(ωt), û₂ᵢ(ωt))` for channel `i`.
    #[inline]
    pub fn dither_values(&self, i: usize, t: f64) -> (f64, f64) {
        let (j1, j2) = self.spec.channels[i].dither_pair;
        let th = self.spec.omega * t;
        (self.spec.dithers[j1].eval_unchecked(th), self.spec.dithers[j2].eval_unchecked(th))
    }

    /// ESC right-hand side `ẋᵢ = √ω·aᵢ·(b₁ᵢ(s)û₁ᵢ + b₂ᵢ(s)û₂ᵢ)` with `s` the
    /// seek value at `x`.
    pub fn esc_rhs(&self, t: f64, x: &[f64], a: &[f64], out: &mut [f64]) {
        let s = self.spec.objective.seek_value(x);
        let sw = self.spec.omega.sqrt();
        for (i, ch) in self.spec.channels.iter().enumerate() {
            let (u1, u2) = self.dither_values(i, t);
            out[i] = sw * a[i] * (ch.b1.eval(s) * u1 + ch.b2.eval(s) * u2);
        }
    }

    /// Actual inputs `(u₁ᵢ, u₂ᵢ) = aᵢ√ω·(û₁ᵢ, û₂ᵢ)` at `t`.
    pub fn inputs(&self, t: f64, a: &[f64], u1: &mut [f64], u2: &mut [f64]) {
        let sw = self.spec.omega.sqrt();
        for i in 0..self.n() {
            let (d1, d2) = self.dither_values(i, t);
            u1[i] = sw * a[i] * d1;
            u2[i] = sw * a[i] * d2;
        }
    }
}

/// Sampled suprema backing the smoothness requirements on the channel
/// elements over the objective's range on the domain box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A1Bounds {
    pub sup_b: f64,
    pub sup_db: f64,
    pub sup_db0: f64,
    pub finite: bool,
}

pub fn sample_a1_bounds(spec: &EscSystemSpec) -> A1Bounds {
    let obj = &spec.objective;
    let values: Vec<f64> = box_grid(&obj.domain, 9).iter().map(|p| obj.seek_value(p)).collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let mut out = A1Bounds { sup_b: 0.0, sup_db: 0.0, sup_db0: 0.0, finite: lo.is_finite() && hi.is_finite() };
    if !out.finite {
        return out;
    }
    const K: usize = 257;
    for ch in &spec.channels {
        for k in 0..K {
            let f = lo + (hi - lo) * k as f64 / (K - 1) as f64;
            let h = (1e-4 * f.abs()).max(1e-4);
            for b in [&ch.b1, &ch.b2] {
                out.sup_b = out.sup_b.max(b.eval(f).abs());
                out.sup_db = out.sup_db.max(b.derivative(f).abs());
            }
            let db0 = match (b0_of(ch, f + h), b0_of(ch, f - h)) {
                (Ok(p), Ok(m)) => (p - m) / (2.0 * h),
                _ => f64::NAN,
            };
            out.sup_db0 = out.sup_db0.max(db0.abs());
        }
    }
    out.finite = out.sup_b.is_finite() && out.sup_db.is_finite() && out.sup_db0.is_finite();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EtaForm {
    /// `ε₀/(1+t)²`
    InverseSquare,
    /// `ε₀·e^{−rate·t}`
    Exponential { rate: f64 },
    /// `ε₀·e^{−rate·t}·cos(freq·t)`
    DampedCosine { rate: f64, freq: f64 },
}

/// Synthetic decaying estimation error added to the exact averaged
/// right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationErrorModel {
    pub eps0: f64,
    pub theta0: f64,
    pub form: EtaForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct A4Report {
    pub bounded: bool,
    pub lipschitz: bool,
    pub decays: bool,
}

impl EstimationErrorModel {
    pub fn inverse_square(eps0: f64) -> Self {
        Self { eps0, theta0: 2.0 * eps0, form: EtaForm::InverseSquare }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self.form {
            EtaForm::InverseSquare => self.eps0 / ((1.0 + t) * (1.0 + t)),
            EtaForm::Exponential { rate } => self.eps0 * (-rate * t).exp(),
            EtaForm::DampedCosine { rate, freq } => self.eps0 * (-rate * t).exp() * (freq * t).cos(),
        }
    }

    /// Sampled check of the sup bound, the Lipschitz constant and decay by
    /// `t_end ≥ 100`.
    pub fn verify(&self, t_end: f64) -> A4Report {
        let t_end = t_end.max(100.0);
        let m = 20_000;
        let h = t_end / m as f64;
        let mut bounded = true;
        let mut lipschitz = true;
        let mut prev = self.eval(0.0);
        for k in 0..=m {
            let v = self.eval(k as f64 * h);
            if v.abs() > self.eps0 * (1.0 + 1e-12) {
                bounded = false;
            }
            if k > 0 && (v - prev).abs() > self.theta0 * h * (1.0 + 1e-9) {
                lipschitz = false;
            }
            prev = v;
        }
        A4Report { bounded, lipschitz, decays: self.eval(t_end).abs() < 0.01 * self.eps0 }
    }
}
