//! Continuous-discrete extended Kalman filter that estimates the averaged
//! right-hand side `J` from objective measurements alone.
//!
//! State layout (dimension `2n+1`):
//!
//! ```text
//! [ x̄1 (n) | x̄2 (n) | x̄3 ]
//! ```
//!
//! `x̄1` estimates `−ν̂ᵢaᵢ²·∂f/∂xᵢ·b₀ᵢ(f)`, `x̄2` its derivative (constant
//! between measurements), `x̄3` the objective value at the previous
//! measurement. The measurement model is the first-order Chen–Fliess
//! increment with the gradient recovered from `x̄1`, which makes it linear in
//! the state once the coefficients are frozen at `t₁`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{EscError, Result};
use crate::model::{b0_of, EscModel};

/// Channel coefficients smaller than this are treated as singular.
pub const B0_SINGULAR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GekfConfig {
    /// Process noise density on `x̄1`.
    pub q1: f64,
    /// Process noise density on `x̄2`.
    pub q2: f64,
    /// Process noise density on `x̄3`.
    pub q3: f64,
    /// Measurement noise variance.
    pub r: f64,
    /// Initial covariance scale (`P₀ = p0·I`).
    pub p0: f64,
    /// Amplitude floor as a fraction of each channel's `a0`.
    pub a_floor: f64,
    /// Per-update decay of a held channel's estimate.
    pub hold_decay: f64,
    /// Average `x̄1` over one dither period before exporting it.
    pub smoothing: bool,
    /// Integrator steps between measurement updates.
    pub n_meas: usize,
}

impl Default for GekfConfig {
    fn default() -> Self {
        Self {
            q1: 1e-2,
            q2: 1e-3,
            q3: 1e-2,
            r: 1e-2,
            p0: 10.0,
            a_floor: 1e-3,
            hold_decay: 0.999,
            smoothing: true,
            n_meas: 1,
        }
    }
}

impl GekfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("q1", self.q1), ("q2", self.q2), ("q3", self.q3), ("r", self.r), ("p0", self.p0), ("a_floor", self.a_floor)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EscError::Config(format!("gekf.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.hold_decay) {
            return Err(EscError::Config("gekf.hold_decay must lie in [0, 1]".into()));
        }
        if self.n_meas == 0 {
            return Err(EscError::Config("gekf.n_meas must be at least 1".into()));
        }
        Ok(())
    }
}

/// Filter mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GekfState {
    n: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub t: f64,
}

/// Per-update bookkeeping exported to the diagnostics log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateInfo {
    pub innovation: f64,
    pub predicted: f64,
    /// Channels skipped for a singular `b₀` or an amplitude below the floor.
    pub skipped: Vec<bool>,
}

/// Inputs of one measurement update over `[t₁, t₂]`.
#[derive(Debug, Clone, Copy)]
pub struct Measurement<'a> {
    pub f_t2: f64,
    pub f_t1: f64,
    /// `∫ u₁ᵢ dτ` of the applied inputs over the interval.
    pub u1: &'a [f64],
    pub u2: &'a [f64],
    /// Amplitudes used to scale `ν̂ᵢ`.
    pub a: &'a [f64],
    /// Absolute amplitude floor per channel.
    pub a_floor: &'a [f64],
}

impl GekfState {
    /// `x̄1 = x̄2 = 0`, `x̄3` = first measurement, `P = p0·I`.
    pub fn new(n: usize, cfg: &GekfConfig, f_first: f64, t0: f64) -> Self {
        let m = 2 * n + 1;
        let mut mean = DVector::zeros(m);
        mean[2 * n] = f_first;
        Self { n, mean, cov: DMatrix::identity(m, m) * cfg.p0, t: t0 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x1(&self) -> &[f64] {
        &self.mean.as_slice()[..self.n]
    }

    pub fn x2(&self) -> &[f64] {
        &self.mean.as_slice()[self.n..2 * self.n]
    }

    pub fn x3(&self) -> f64 {
        self.mean[2 * self.n]
    }

    /// Constant-velocity transition for `x̄1`/`x̄2`, identity elsewhere.
    fn transition(&self, dt: f64) -> DMatrix<f64> {
        let m = 2 * self.n + 1;
        let mut phi = DMatrix::identity(m, m);
        for i in 0..self.n {
            phi[(i, self.n + i)] = dt;
        }
        phi
    }

    /// Advance mean by `ẋ̄ = [x̄2, 0, 0]` and covariance by `ΦPΦᵀ + Q·dt`.
    pub fn propagate(&mut self, cfg: &GekfConfig, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(EscError::Input(format!("propagate needs dt > 0, got {dt}")));
        }
        let n = self.n;
        for i in 0..n {
            self.mean[i] += self.mean[n + i] * dt;
        }
        let phi = self.transition(dt);
        let mut cov = &phi * &self.cov * phi.transpose();
        for i in 0..n {
            cov[(i, i)] += cfg.q1 * dt;
            cov[(n + i, n + i)] += cfg.q2 * dt;
        }
        cov[(2 * n, 2 * n)] += cfg.q3 * dt;
        self.cov = symmetrize(cov);
        self.t += dt;
        self.check_finite()
    }

    /// Scalar update against the first-order increment model, Joseph form.
    pub fn measurement_update(&mut self, cfg: &GekfConfig, model: &EscModel, meas: &Measurement<'_>) -> Result<UpdateInfo> {
        let n = self.n;
        let m = 2 * n + 1;
        let mut h = DVector::zeros(m);
        let mut skipped = vec![false; n];
        for (i, ch) in model.spec.channels.iter().enumerate() {
            let b0 = b0_of(ch, meas.f_t1)?;
            let nu = model.nu_hat[i] * meas.a[i] * meas.a[i];
            if b0.abs() < B0_SINGULAR || meas.a[i].abs() < meas.a_floor[i] || nu.abs() < f64::MIN_POSITIVE {
                skipped[i] = true;
                continue;
            }
            let lin = ch.b1.eval(meas.f_t1) * meas.u1[i] + ch.b2.eval(meas.f_t1) * meas.u2[i];
            h[i] = -lin / (nu * b0);
        }
        h[2 * n] = 1.0;

        let predicted = h.dot(&self.mean);
        let innovation = meas.f_t2 - predicted;
        let ph = &self.cov * &h;
        let s = h.dot(&ph) + cfg.r;
        let mut gain = ph / s;
        for (i, skip) in skipped.iter().enumerate() {
            if *skip {
                gain[i] = 0.0;
                gain[n + i] = 0.0;
            }
        }
        self.mean += &gain * innovation;
        let ikh = DMatrix::identity(m, m) - &gain * h.transpose();
        let cov = &ikh * &self.cov * ikh.transpose() + (&gain * gain.transpose()) * cfg.r;
        self.cov = symmetrize(cov);

        for (i, skip) in skipped.iter().enumerate() {
            if *skip {
                self.mean[i] *= cfg.hold_decay;
                self.mean[n + i] = 0.0;
            }
        }
        // x̄3 is replaced by the fresh measurement; its uncertainty is the
        // measurement's own and it no longer correlates with x̄1, x̄2.
        self.mean[2 * n] = meas.f_t2;
        for k in 0..m {
            self.cov[(k, 2 * n)] = 0.0;
            self.cov[(2 * n, k)] = 0.0;
        }
        self.cov[(2 * n, 2 * n)] = cfg.r;
        self.check_finite()?;
        Ok(UpdateInfo { innovation, predicted, skipped })
    }

    fn check_finite(&self) -> Result<()> {
        if self.mean.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(EscError::FilterDivergence { t: self.t, what: "non-finite mean or covariance".into() })
        }
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov.clone()).eigenvalues.min()
    }

    /// Largest absolute entry of `P − Pᵀ`.
    pub fn asymmetry(&self) -> f64 {
        (&self.cov - self.cov.transpose()).amax()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }
}

fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// Exported estimate of the averaged right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct JSignal {
    pub j: Vec<f64>,
    pub t: f64,
}

/// Turns the stream of `x̄1` values into `J`, averaging each channel over
/// its own dither period when smoothing is on.
#[derive(Debug, Clone)]
pub struct JExtractor {
    smoothing: bool,
    windows: Vec<usize>,
    history: Vec<VecDeque<f64>>,
}

impl JExtractor {
    /// `windows[i]`: number of samples spanning one period of channel `i`.
    pub fn new(smoothing: bool, windows: Vec<usize>) -> Self {
        let history = windows.iter().map(|w| VecDeque::with_capacity(*w)).collect();
        Self { smoothing, windows: windows.into_iter().map(|w| w.max(1)).collect(), history }
    }

    /// Records the current `x̄1` and returns the exported `J`.
    pub fn extract_j(&mut self, state: &GekfState) -> JSignal {
        JSignal { j: self.push(state.x1()), t: state.t }
    }

    /// Records one sample per channel and returns the (windowed) average.
    pub fn push(&mut self, values: &[f64]) -> Vec<f64> {
        if !self.smoothing {
            return values.to_vec();
        }
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let buf = &mut self.history[i];
                if buf.len() == self.windows[i] {
                    buf.pop_front();
                }
                buf.push_back(*v);
                buf.iter().sum::<f64>() / buf.len() as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dither::DitherSignal;
    use crate::model::{ChannelSpec, EscSystemSpec, ObjectiveMap, ScalarMap};
    use std::f64::consts::TAU;

    fn case1_model() -> EscModel {
        let spec = EscSystemSpec {
            objective: ObjectiveMap::quadratic(vec![1.0], vec![2.0], 0.0, vec![(-2.0, 4.0)]),
            channels: vec![ChannelSpec { b1: ScalarMap::linear(1.0), b2: ScalarMap::constant(1.0), dither_pair: (0, 1) }],
            dithers: vec![DitherSignal::cosine(), DitherSignal::sine()],
            omega: 8.0,
            a0: vec![1.0],
            lambda: vec![0.1],
            x0: vec![2.0],
            horizon: 100.0,
            dt: None,
        };
        EscModel::compile(&spec).unwrap()
    }

    fn psd(s: &GekfState) -> bool {
        s.asymmetry() <= 1e-10 && s.min_eigenvalue() >= -1e-9
    }

    #[test]
    fn propagate_examples() {
        let cfg = GekfConfig::default();
        let mut s = GekfState::new(1, &cfg, 3.0, 0.0);
        s.propagate(&cfg, 0.1).unwrap();
        assert_eq!(s.x1(), &[0.0]);
        assert_eq!(s.x3(), 3.0);

        s.mean[0] = 2.0;
        s.mean[1] = 1.0;
        s.propagate(&cfg, 0.5).unwrap();
        assert_eq!(s.x1(), &[2.5]);
        assert!((s.t - 0.6).abs() < 1e-15);
    }

    #[test]
    fn propagate_without_noise_keeps_psd() {
        let cfg = GekfConfig { q1: 1e-300, q2: 1e-300, q3: 1e-300, ..GekfConfig::default() };
        let mut s = GekfState::new(2, &cfg, 0.0, 0.0);
        s.cov[(0, 2)] = 3.0;
        s.cov[(2, 0)] = 3.0;
        assert!(psd(&s));
        for _ in 0..200 {
            s.propagate(&cfg, 0.05).unwrap();
            assert!(psd(&s));
        }
    }

    #[test]
    fn propagate_rejects_bad_dt() {
        let cfg = GekfConfig::default();
        let mut s = GekfState::new(1, &cfg, 0.0, 0.0);
        assert!(s.propagate(&cfg, 0.0).is_err());
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let model = case1_model();
        let cfg = GekfConfig::default();
        let mut s = GekfState::new(1, &cfg, 2.0, 0.0);
        s.mean[0] = -0.7;
        let before = s.clone();
        let (u1, u2) = ([0.01], [0.02]);
        // predicted = x̄3 + c·x̄1 with c = −(b1 U1 + b2 U2)/(ν̂ a² b0)
        let c = -(2.0 * 0.01 + 0.02) / 0.5;
        let f_t2 = 2.0 + c * -0.7;
        let info = s
            .measurement_update(&cfg, &model, &Measurement { f_t2, f_t1: 2.0, u1: &u1, u2: &u2, a: &[1.0], a_floor: &[1e-3] })
            .unwrap();
        assert!(info.innovation.abs() < 1e-14);
        assert!((s.x1()[0] - before.x1()[0]).abs() < 1e-14);
        assert_eq!(s.x3(), f_t2);
        assert!(s.cov[(0, 0)] <= before.cov[(0, 0)]);
        assert!(psd(&s));
    }

    #[test]
    fn huge_noise_moves_nothing() {
        let model = case1_model();
        let cfg = GekfConfig { r: 1e12, ..GekfConfig::default() };
        let mut s = GekfState::new(1, &cfg, 2.0, 0.0);
        s.measurement_update(&cfg, &model, &Measurement { f_t2: 2.5, f_t1: 2.0, u1: &[0.01], u2: &[0.02], a: &[1.0], a_floor: &[1e-3] })
            .unwrap();
        assert!(s.x1()[0].abs() < 1e-6);
        assert!(s.x2()[0].abs() < 1e-6);
    }

    #[test]
    fn below_floor_holds_and_decays() {
        let model = case1_model();
        let cfg = GekfConfig::default();
        let mut s = GekfState::new(1, &cfg, 2.0, 0.0);
        s.mean[0] = 0.5;
        s.mean[1] = 0.3;
        let info = s
            .measurement_update(&cfg, &model, &Measurement { f_t2: 9.0, f_t1: 2.0, u1: &[0.01], u2: &[0.02], a: &[1e-5], a_floor: &[1e-3] })
            .unwrap();
        assert_eq!(info.skipped, vec![true]);
        assert!((s.x1()[0] - 0.5 * 0.999).abs() < 1e-15);
        assert_eq!(s.x2()[0], 0.0);
        assert_eq!(s.x3(), 9.0);
    }

    #[test]
    fn extractor_examples() {
        let cfg = GekfConfig::default();
        let mut s = GekfState::new(1, &cfg, 0.0, 0.0);
        let mut raw = JExtractor::new(false, vec![64]);
        s.mean[0] = 0.123;
        assert_eq!(raw.extract_j(&s).j, vec![0.123]);

        let mut smooth = JExtractor::new(true, vec![64]);
        for _ in 0..100 {
            s.mean[0] = 0.4;
            assert!((smooth.extract_j(&s).j[0] - 0.4).abs() < 1e-15);
        }

        let mut smooth = JExtractor::new(true, vec![64]);
        let mut last = 0.0;
        for k in 0..64 {
            s.mean[0] = (TAU * k as f64 / 64.0 + 0.3).sin();
            last = smooth.extract_j(&s).j[0];
        }
        assert!(last.abs() < 1e-6);
    }
}
