//! Decay-bound check on `J`, the vanishing-oscillation condition checker,
//! and convergence metrics for baseline-vs-proposed comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{EscError, Result};
use crate::model::{b0_of, box_grid, EscSystemSpec};
use crate::sim::TrajectoryLog;

/// Values of the seek-side gap below this count as the extremum itself.
const AT_EXTREMUM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSettings {
    /// Exponent of the `1/t^p` bound.
    pub p: f64,
    /// Samples before this time are ignored by the bound check.
    pub t_min: f64,
    /// Trailing window for envelope metrics, seconds.
    pub window: f64,
    /// Check the oracle `J` instead of the estimate.
    pub use_exact_j: bool,
    /// Settling band as a fraction of the initial error.
    pub settle_band: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self { p: 1.05, t_min: 1.0, window: 10.0, use_exact_j: false, settle_band: 0.05 }
    }
}

// ---------------------------------------------------------------------------
// 1/t^p bound

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBound {
    pub holds: bool,
    /// Earliest sample time from which every later sample obeys the bound.
    pub t_star: Option<f64>,
    /// Violations after `t_star`, or after `t_min` when there is none.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckResult {
    pub p: f64,
    pub t_min: f64,
    pub channels: Vec<ChannelBound>,
}

impl BoundCheckResult {
    pub fn holds(&self) -> bool {
        self.channels.iter().all(|c| c.holds)
    }

    /// Latest `t*` over channels, if every channel has one.
    pub fn t_star(&self) -> Option<f64> {
        self.channels.iter().try_fold(f64::NEG_INFINITY, |m, c| c.t_star.map(|t| m.max(t)))
    }
}

/// `|J(t)| ≤ 1/t^p` for one channel's samples.
pub fn check_bound_channel(times: &[f64], j: &[f64], p: f64, t_min: f64) -> Result<ChannelBound> {
    if times.is_empty() || times.len() != j.len() {
        return Err(EscError::Input(format!("bound check needs equal, non-empty series ({} times, {} values)", times.len(), j.len())));
    }
    if !(p > 1.0) || !(t_min > 0.0) {
        return Err(EscError::Input(format!("bound check needs p > 1 and t_min > 0 (p = {p}, t_min = {t_min})")));
    }
    let ok = |k: usize| j[k].abs() <= times[k].powf(-p);
    let first = times.partition_point(|t| *t < t_min);
    let mut start = times.len();
    for k in (first..times.len()).rev() {
        if !ok(k) {
            break;
        }
        start = k;
    }
    let t_star = (start < times.len()).then(|| times[start]);
    let violations = (first..times.len()).filter(|k| !ok(*k)).count();
    Ok(ChannelBound { holds: t_star.is_some(), t_star, violations: if t_star.is_some() { 0 } else { violations } })
}

/// Bound check on every channel of a sampled `J` series.
pub fn check_bound(times: &[f64], j: &[Vec<f64>], p: f64, t_min: f64) -> Result<BoundCheckResult> {
    if j.is_empty() {
        return Err(EscError::Input("bound check on an empty series".into()));
    }
    let n = j[0].len();
    let channels = (0..n)
        .map(|i| {
            let col: Vec<f64> = j.iter().map(|row| row[i]).collect();
            check_bound_channel(times, &col, p, t_min)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCheckResult { p, t_min, channels })
}

/// Bound check on a run's estimated (or oracle) `J`.
pub fn check_bound_log(log: &TrajectoryLog, p: f64, t_min: f64, use_exact: bool) -> Result<BoundCheckResult> {
    let what = if use_exact { "exact" } else { "estimated" };
    let j = log
        .rows
        .iter()
        .map(|r| if use_exact { r.j_exact.clone() } else { r.j_est.clone() })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| EscError::Input(format!("log has no {what} J column")))?;
    check_bound(&log.times(), &j, p, t_min)
}

// ---------------------------------------------------------------------------
// vanishing-oscillation condition

/// Constants of the companion growth condition on `f`. Documented only;
/// nothing here searches for them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub mu: Option<f64>,
    pub m1: Option<f64>,
}

/// Fit of `α₁f̃^{m₂} ≤ b₀ᵢ ≤ α₂f̃^{m₂}` over sampled points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2Channel {
    pub channel: usize,
    pub m2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// `m₄ = 3(1+m₂)/2 − 1/m₁`, available only when `m₁` is supplied.
    pub m4: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2Element {
    /// 1 or 2: which of the channel's two fields.
    pub s: u8,
    pub channel: usize,
    /// `b_{si}` at the extremum.
    pub value_at_extremum: f64,
    /// `|b_{si}| > 0` where `f̃ = 0`: no `M`, `m₃` can work.
    pub contradiction: bool,
    /// `m₃ = (m₂+1)/2` from the channel fit.
    pub m3: f64,
    /// Smallest `M` with `|b_{si}| ≤ M·f̃^{m₃}` on the sampled points.
    pub m_bound: f64,
    /// Sampled point attaining `m_bound`.
    pub witness: Vec<f64>,
    pub satisfiable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B2Report {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// `f(x*) − f*`; zero for consistent metadata.
    pub gap_at_extremum: f64,
    pub channels: Vec<B2Channel>,
    pub elements: Vec<B2Element>,
    pub contradiction: bool,
    pub growth: GrowthConstants,
}

impl B2Report {
    pub fn passes(&self) -> bool {
        !self.contradiction
    }
}

/// Least-squares slope of `y` on `x`.
fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Evaluates every field element at the extremum and probes the sampled
/// domain for the power-law bounds (`samples` grid points overall).
pub fn check_b2(spec: &EscSystemSpec, samples: usize, growth: GrowthConstants) -> Result<B2Report> {
    let obj = &spec.objective;
    let (x_star, f_star) = match (&obj.x_star, obj.f_star) {
        (Some(x), Some(f)) => (x.clone(), f),
        _ => return Err(EscError::Capability("condition check needs x* and f* in the objective".into())),
    };
    let sign = obj.seek_sign();
    let gap = |x: &[f64]| sign * (obj.eval(x) - f_star);
    let gap_star = gap(&x_star);
    let s_star = obj.seek_value(&x_star);

    let n = spec.n();
    let per_axis = ((samples.max(2) as f64).powf(1.0 / n as f64).ceil() as usize).max(2);
    let points: Vec<(Vec<f64>, f64, f64)> = box_grid(&obj.domain, per_axis)
        .into_iter()
        .map(|p| {
            let g = gap(&p);
            let s = obj.seek_value(&p);
            (p, g, s)
        })
        .filter(|(_, g, _)| *g > AT_EXTREMUM)
        .collect();

    let mut channels = Vec::with_capacity(n);
    let mut elements = Vec::with_capacity(2 * n);
    for (i, ch) in spec.channels.iter().enumerate() {
        let b0: Vec<f64> = points.iter().map(|(_, _, s)| b0_of(ch, *s)).collect::<Result<_>>()?;
        let logs: Vec<(f64, f64)> =
            points.iter().zip(&b0).filter(|(_, b)| b.abs() > 0.0).map(|((_, g, _), b)| (g.ln(), b.abs().ln())).collect();
        let m2 = slope(&logs);
        let (alpha1, alpha2) = points
            .iter()
            .zip(&b0)
            .map(|((_, g, _), b)| b / g.powf(m2))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
        let m4 = growth.m1.map(|m1| 1.5 * (1.0 + m2) - 1.0 / m1);
        channels.push(B2Channel { channel: i, m2, alpha1, alpha2, m4 });

        let m3 = 0.5 * (m2 + 1.0);
        for (s, b) in [(1u8, &ch.b1), (2u8, &ch.b2)] {
            let at_star = b.eval(s_star);
            let contradiction = at_star.abs() > AT_EXTREMUM && gap_star.abs() <= AT_EXTREMUM;
            let (m_bound, witness) = points.iter().fold((0.0_f64, x_star.clone()), |(m, w), (p, g, sv)| {
                let r = b.eval(*sv).abs() / g.powf(m3);
                if r > m { (r, p.clone()) } else { (m, w) }
            });
            let satisfiable = !contradiction && m_bound.is_finite() && alpha1 > 0.0;
            elements.push(B2Element { s, channel: i, value_at_extremum: at_star, contradiction, m3, m_bound, witness, satisfiable });
        }
    }
    let contradiction = elements.iter().any(|e| e.contradiction);
    Ok(B2Report { x_star, f_star, gap_at_extremum: gap_star, channels, elements, contradiction, growth })
}

// ---------------------------------------------------------------------------
// metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `‖x(t_end) − x*‖`.
    pub final_error: f64,
    /// Start of the first period-average block after which every block stays
    /// inside the settling band.
    pub settling_time: Option<f64>,
    /// `(max − min)/2` per coordinate over the trailing window.
    pub envelope: Vec<f64>,
    /// Mean per coordinate over the trailing window.
    pub window_mean: Vec<f64>,
    pub final_amplitude: Vec<f64>,
}

/// Means of consecutive, non-overlapping blocks of `k` samples, stamped
/// with each block's first time. A trailing partial block is dropped.
pub fn block_means(times: &[f64], values: &[f64], k: usize) -> Vec<(f64, f64)> {
    let k = k.max(1);
    times
        .chunks_exact(k)
        .zip(values.chunks_exact(k))
        .map(|(t, v)| (t[0], v.iter().sum::<f64>() / k as f64))
        .collect()
}

/// Period-averaged trajectory, one block per longest channel period.
/// The initial sample is skipped so blocks line up with whole periods.
pub fn period_average(log: &TrajectoryLog) -> Vec<(f64, Vec<f64>)> {
    let k = (0..log.n).map(|i| log.period_samples(i)).max().unwrap_or(1);
    let rows = &log.rows[1.min(log.rows.len())..];
    rows.chunks_exact(k)
        .map(|w| {
            let mut m = vec![0.0; log.n];
            for r in w {
                m.iter_mut().zip(&r.x).for_each(|(a, x)| *a += x / k as f64);
            }
            (w[0].t, m)
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn metrics(log: &TrajectoryLog, x_star: &[f64], window: f64, settle_band: f64) -> RunMetrics {
    let n = log.n;
    let last = log.last();
    let first = &log.rows[0];
    let t_from = last.t - window;
    let tail: Vec<_> = log.rows.iter().filter(|r| r.t >= t_from).collect();
    let mut envelope = vec![0.0; n];
    let mut window_mean = vec![0.0; n];
    for i in 0..n {
        let (lo, hi, sum) =
            tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), r| (lo.min(r.x[i]), hi.max(r.x[i]), s + r.x[i]));
        envelope[i] = 0.5 * (hi - lo);
        window_mean[i] = sum / tail.len() as f64;
    }

    let band = settle_band * dist(&first.x, x_star);
    let avg = period_average(log);
    let mut settling_time = None;
    for (t, m) in avg.iter().rev() {
        if dist(m, x_star) <= band {
            settling_time = Some(*t);
        } else {
            break;
        }
    }

    RunMetrics { final_error: dist(&last.x, x_star), settling_time, envelope, window_mean, final_amplitude: last.a.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: RunMetrics,
    pub proposed: RunMetrics,
    /// Proposed over baseline envelope per coordinate; `None` where the
    /// baseline envelope is at most `1e-12`.
    pub envelope_ratio: Vec<Option<f64>>,
    pub bound_check: Option<BoundCheckResult>,
}

pub fn compare(baseline: &TrajectoryLog, proposed: &TrajectoryLog, x_star: &[f64], settings: &AnalysisSettings) -> Result<ComparisonReport> {
    let tol = 1e-9 * baseline.dt_log.max(proposed.dt_log);
    if (baseline.dt_log - proposed.dt_log).abs() > tol {
        return Err(EscError::Input(format!("logs have different strides ({} vs {})", baseline.dt_log, proposed.dt_log)));
    }
    if baseline.n != proposed.n || (baseline.last().t - proposed.last().t).abs() > baseline.dt_log {
        return Err(EscError::Input("logs cover different horizons or dimensions".into()));
    }
    let b = metrics(baseline, x_star, settings.window, settings.settle_band);
    let p = metrics(proposed, x_star, settings.window, settings.settle_band);
    let envelope_ratio = b.envelope.iter().zip(&p.envelope).map(|(eb, ep)| (*eb > 1e-12).then(|| ep / eb)).collect();
    let bound_check = check_bound_log(proposed, settings.p, settings.t_min, settings.use_exact_j).ok();
    Ok(ComparisonReport { baseline: b, proposed: p, envelope_ratio, bound_check })
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub mode: String,
    pub omega: f64,
    pub lambda: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub p: f64,
    pub t_min: f64,
    pub window: f64,
    pub use_exact_j: bool,
}

/// Metrics of one agent's runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<RunMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposed: Option<RunMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lbs: Option<RunMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope_ratio: Option<Vec<Option<f64>>>,
}

/// Top-level JSON report; maps are keyed by agent name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub params: ReportParams,
    pub metrics: BTreeMap<String, AgentMetrics>,
    pub bound_check: BTreeMap<String, BoundCheckResult>,
    pub b2: BTreeMap<String, B2Report>,
}
