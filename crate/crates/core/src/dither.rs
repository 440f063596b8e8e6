//! Periodic zero-mean probing waveforms and the averaging weight between a
//! pair of them.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{EscError, Result};

/// Composite Simpson panels per period used by every quadrature here.
pub const QUADRATURE_PANELS: usize = 4096;

/// Samples per period used by [`verify_a2`].
pub const A2_SAMPLES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DitherKind {
    Cosine,
    Sine,
    /// Piecewise-linear periodic interpolation through `(θ, value)` samples
    /// on `[0, T)`.
    Tabulated { samples: Vec<(f64, f64)> },
}

/// A `T`-periodic scalar waveform `û(θ)` evaluated at scaled time `θ = ωt`.
///
/// Cosine and sine run one full cycle per period: `cos(2πθ/T + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherSignal {
    pub kind: DitherKind,
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_bound")]
    pub bound: f64,
}

fn default_period() -> f64 {
    TAU
}

fn default_bound() -> f64 {
    1.0
}

impl DitherSignal {
    pub fn cosine() -> Self {
        Self { kind: DitherKind::Cosine, phase: 0.0, period: TAU, bound: 1.0 }
    }

    pub fn sine() -> Self {
        Self { kind: DitherKind::Sine, phase: 0.0, period: TAU, bound: 1.0 }
    }

    /// Samples are sorted by θ; the bound is the largest absolute sample.
    pub fn tabulated(period: f64, mut samples: Vec<(f64, f64)>) -> Self {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let bound = samples.iter().fold(0.0_f64, |m, s| m.max(s.1.abs()));
        Self { kind: DitherKind::Tabulated { samples }, phase: 0.0, period, bound }
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = period;
        self
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(EscError::Config(format!("dither period must be positive, got {}", self.period)));
        }
        if !(self.bound.is_finite() && self.bound > 0.0) {
            return Err(EscError::Config(format!("dither bound must be positive, got {}", self.bound)));
        }
        if let DitherKind::Tabulated { samples } = &self.kind {
            if samples.is_empty() {
                return Err(EscError::Config("tabulated dither has no samples".into()));
            }
            if samples.iter().any(|(th, v)| !th.is_finite() || !v.is_finite()) {
                return Err(EscError::Config("tabulated dither has non-finite samples".into()));
            }
            if samples.iter().any(|(th, _)| *th < 0.0 || *th >= self.period) {
                return Err(EscError::Config("tabulated dither samples must lie in [0, T)".into()));
            }
        }
        Ok(())
    }

    /// `û(θ mod T)`.
    pub fn eval(&self, theta: f64) -> Result<f64> {
        match &self.kind {
            DitherKind::Tabulated { samples } if samples.is_empty() => {
                Err(EscError::Config("tabulated dither has no samples".into()))
            }
            _ => Ok(self.eval_unchecked(theta)),
        }
    }

    /// Hot-path evaluation; the caller has validated the signal.
    #[inline]
    pub(crate) fn eval_unchecked(&self, theta: f64) -> f64 {
        let w = TAU / self.period;
        match &self.kind {
            DitherKind::Cosine => (w * theta.rem_euclid(self.period) + self.phase).cos(),
            DitherKind::Sine => (w * theta.rem_euclid(self.period) + self.phase).sin(),
            DitherKind::Tabulated { samples } => {
                let shifted = (theta + self.phase / w).rem_euclid(self.period);
                interp_periodic(samples, self.period, shifted)
            }
        }
    }
}

fn interp_periodic(samples: &[(f64, f64)], period: f64, theta: f64) -> f64 {
    if samples.len() == 1 {
        return samples[0].1;
    }
    // index of the first sample strictly after θ
    let idx = samples.partition_point(|s| s.0 <= theta);
    let (lo, hi) = if idx == 0 {
        let last = samples[samples.len() - 1];
        ((last.0 - period, last.1), samples[0])
    } else if idx == samples.len() {
        let first = samples[0];
        (samples[idx - 1], (first.0 + period, first.1))
    } else {
        (samples[idx - 1], samples[idx])
    };
    let span = hi.0 - lo.0;
    if span <= 0.0 {
        return lo.1;
    }
    lo.1 + (hi.1 - lo.1) * (theta - lo.0) / span
}

/// Outcome of the periodicity / zero-mean / boundedness checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct A2Report {
    pub periodic: bool,
    pub zero_mean: bool,
    pub bounded: bool,
}

impl A2Report {
    pub fn all(&self) -> bool {
        self.periodic && self.zero_mean && self.bounded
    }
}

/// Report-only check of periodicity, zero mean and the declared sup bound.
pub fn verify_assumption_a2(d: &DitherSignal) -> A2Report {
    if d.validate().is_err() {
        return A2Report { periodic: false, zero_mean: false, bounded: false };
    }
    let period = d.period;
    let tol = match d.kind {
        DitherKind::Tabulated { .. } => 1e-12,
        _ => 1e-12 * (1.0 + d.bound),
    };
    let mut periodic = true;
    let mut bounded = true;
    for k in 0..A2_SAMPLES {
        let th = period * k as f64 / A2_SAMPLES as f64;
        let v = d.eval_unchecked(th);
        // shift by one and by three periods from an offset grid
        let v1 = d.eval_unchecked(th + period);
        let v3 = d.eval_unchecked(th - 3.0 * period);
        if (v - v1).abs() > tol || (v - v3).abs() > tol {
            periodic = false;
        }
        if v.abs() > d.bound {
            bounded = false;
        }
    }
    let mean = simpson_period(|th| d.eval_unchecked(th), period, QUADRATURE_PANELS);
    A2Report { periodic, zero_mean: mean.abs() <= 1e-9 * period, bounded }
}

/// Composite Simpson over `[0, period]` with `panels` panels (each panel
/// uses its own midpoint).
pub fn simpson_period(f: impl Fn(f64) -> f64, period: f64, panels: usize) -> f64 {
    let h = period / panels as f64;
    let mut acc = 0.0;
    let mut left = f(0.0);
    for k in 0..panels {
        let a = k as f64 * h;
        let right = f(a + h);
        acc += left + 4.0 * f(a + 0.5 * h) + right;
        left = right;
    }
    acc * h / 6.0
}

/// Unit-amplitude averaging weight
/// `ν̂_{j,i} = (1/T) ∫₀ᵀ û_j(θ) ∫₀^θ û_i(τ) dτ dθ`.
pub fn nu_coefficient(u_j: &DitherSignal, u_i: &DitherSignal) -> Result<f64> {
    nu_coefficient_with(u_j, u_i, QUADRATURE_PANELS)
}

/// [`nu_coefficient`] with an explicit panel count.
pub fn nu_coefficient_with(u_j: &DitherSignal, u_i: &DitherSignal, panels: usize) -> Result<f64> {
    u_j.validate()?;
    u_i.validate()?;
    let period = u_j.period;
    if (period - u_i.period).abs() > 1e-12 * period.max(u_i.period) {
        return Err(EscError::Config(format!(
            "dither periods differ: {} vs {}",
            u_j.period, u_i.period
        )));
    }
    if panels == 0 {
        return Err(EscError::Config("quadrature needs at least one panel".into()));
    }
    let ui = |th: f64| u_i.eval_unchecked(th);
    let uj = |th: f64| u_j.eval_unchecked(th);

    // Inner integral I(θ) advanced panel by panel with Simpson; the value at
    // the panel midpoint uses Simpson on the half panel.
    let h = period / panels as f64;
    let mut inner = 0.0;
    let mut outer = 0.0;
    let mut ui_left = ui(0.0);
    let mut uj_left = uj(0.0);
    for k in 0..panels {
        let a = k as f64 * h;
        let mid = a + 0.5 * h;
        let ui_q = ui(a + 0.25 * h);
        let ui_mid = ui(mid);
        let ui_3q = ui(a + 0.75 * h);
        let ui_right = ui(a + h);
        let inner_mid = inner + (0.5 * h / 6.0) * (ui_left + 4.0 * ui_q + ui_mid);
        let inner_right = inner_mid + (0.5 * h / 6.0) * (ui_mid + 4.0 * ui_3q + ui_right);
        let uj_mid = uj(mid);
        let uj_right = uj(a + h);
        outer += (h / 6.0) * (uj_left * inner + 4.0 * uj_mid * inner_mid + uj_right * inner_right);
        inner = inner_right;
        ui_left = ui_right;
        uj_left = uj_right;
    }
    Ok(outer / period)
}
