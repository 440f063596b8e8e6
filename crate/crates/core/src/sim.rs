//! Deterministic fixed-step simulation of the constant-amplitude baseline,
//! the adaptive-amplitude ESC coupled to the filter, and averaged reference
//! trajectories.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EscError, Result};
use crate::gekf::{GekfConfig, GekfState, JExtractor, Measurement};
use crate::lie::lbs_rhs_into;
use crate::model::{EscModel, EscSystemSpec, EstimationErrorModel};

/// Scratch buffers for classical fourth-order Runge–Kutta.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], tmp: vec![0.0; dim] }
    }

    /// Advances `x` in place by one step.
    pub fn step<F>(&mut self, rhs: &mut F, t: f64, x: &mut [f64], dt: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let half = 0.5 * dt;
        rhs(t, x, &mut self.k1)?;
        check_stage(&self.k1, t, "k1")?;
        for i in 0..x.len() {
            self.tmp[i] = x[i] + half * self.k1[i];
        }
        rhs(t + half, &self.tmp, &mut self.k2)?;
        check_stage(&self.k2, t + half, "k2")?;
        for i in 0..x.len() {
            self.tmp[i] = x[i] + half * self.k2[i];
        }
        rhs(t + half, &self.tmp, &mut self.k3)?;
        check_stage(&self.k3, t + half, "k3")?;
        for i in 0..x.len() {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        rhs(t + dt, &self.tmp, &mut self.k4)?;
        check_stage(&self.k4, t + dt, "k4")?;
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

fn check_stage(k: &[f64], t: f64, stage: &str) -> Result<()> {
    match k.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(EscError::Integration { t, what: format!("non-finite {stage} stage in component {i}") }),
    }
}

/// One classical RK4 step of `ẋ = rhs(t, x)`.
pub fn rk4_step<F>(mut rhs: F, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(dt > 0.0) {
        return Err(EscError::Input(format!("rk4_step needs dt > 0, got {dt}")));
    }
    let mut out = x.to_vec();
    Rk4::new(x.len()).step(&mut rhs, t, &mut out, dt)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Baseline,
    Proposed,
    Lbs,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Baseline => "baseline",
            RunMode::Proposed => "proposed",
            RunMode::Lbs => "lbs",
        }
    }
}

/// Per-run knobs that are not part of the system description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Seed for the measurement-noise generator.
    pub seed: u64,
    /// Standard deviation of additive noise on objective measurements.
    pub noise_std: f64,
    /// Integrator steps between logged rows.
    pub log_stride: usize,
    /// Co-integrate the exact averaged trajectory alongside the ESC.
    pub reference: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { seed: 0, noise_std: 0.0, log_stride: 1, reference: true }
    }
}

/// Where the adaptation law gets its `J` from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JSource {
    /// The filter estimate (the proposed scheme).
    Filter,
    /// Filter disabled, `J ≡ 0`.
    Zero,
    /// Filter disabled, `J ≡ c` on every channel.
    Constant(f64),
    /// Period-averaged oracle right-hand side.
    Exact,
}

/// Mutable state of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    /// Input integrals accumulated since the last measurement.
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub f: f64,
    pub a: Vec<f64>,
    pub j_est: Option<Vec<f64>>,
    pub j_exact: Option<Vec<f64>>,
    pub zref: Option<Vec<f64>>,
}

/// Filter internals at a logged step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GekfDiag {
    pub t: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: f64,
    pub trace: f64,
    pub innovation: f64,
    pub min_eig: f64,
    pub asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    /// Sup-norm distance between the ESC state and the co-integrated
    /// averaged trajectory, over every integrator step.
    pub max_reference_deviation: Option<f64>,
}

/// Uniform-rate record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub mode: RunMode,
    pub n: usize,
    pub dt_log: f64,
    /// Dither period of each channel in seconds.
    pub periods: Vec<f64>,
    pub rows: Vec<LogRow>,
    pub diagnostics: Vec<GekfDiag>,
    pub summary: RunSummary,
}

impl TrajectoryLog {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn last(&self) -> &LogRow {
        self.rows.last().expect("log has at least the initial row")
    }

    /// Samples spanning one dither period of channel `i`.
    pub fn period_samples(&self, i: usize) -> usize {
        ((self.periods[i] / self.dt_log).round() as usize).max(1)
    }
}

fn step_count(horizon: f64, dt: f64) -> usize {
    (horizon / dt - 1e-9).ceil().max(1.0) as usize
}

struct Runner<'m> {
    model: &'m EscModel,
    opts: &'m SimOptions,
    n: usize,
    dt: f64,
    steps: usize,
    rng: ChaCha8Rng,
    limit: f64,
    grad: Vec<f64>,
    jx: Vec<f64>,
}

impl<'m> Runner<'m> {
    fn new(model: &'m EscModel, opts: &'m SimOptions) -> Result<Self> {
        if opts.log_stride == 0 {
            return Err(EscError::Config("log_stride must be at least 1".into()));
        }
        if !(opts.noise_std >= 0.0 && opts.noise_std.is_finite()) {
            return Err(EscError::Config("noise_std must be finite and non-negative".into()));
        }
        let n = model.n();
        let dt = model.dt;
        Ok(Self {
            model,
            opts,
            n,
            dt,
            steps: step_count(model.spec.horizon, dt),
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            limit: 10.0 * model.spec.objective.domain_diagonal(),
            grad: vec![0.0; n],
            jx: vec![0.0; n],
        })
    }

    fn measure(&mut self, x: &[f64]) -> f64 {
        let s = self.model.spec.objective.seek_value(x);
        if self.opts.noise_std > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            s + self.opts.noise_std * z
        } else {
            s
        }
    }

    fn guard(&self, t: f64, x: &[f64]) -> Result<()> {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(EscError::Integration { t, what: "non-finite state".into() });
        }
        if norm > self.limit {
            return Err(EscError::Divergence { t, norm, limit: self.limit });
        }
        Ok(())
    }

    fn exact(&mut self, x: &[f64], a: &[f64]) -> Option<Vec<f64>> {
        lbs_rhs_into(self.model, x, a, &mut self.grad, &mut self.jx).ok().map(|_| self.jx.clone())
    }

    fn log_template(&self, mode: RunMode) -> TrajectoryLog {
        TrajectoryLog {
            mode,
            n: self.n,
            dt_log: self.dt * self.opts.log_stride as f64,
            periods: (0..self.n).map(|i| self.model.spec.channel_period(i)).collect(),
            rows: Vec::with_capacity(self.steps / self.opts.log_stride + 2),
            diagnostics: Vec::new(),
            summary: RunSummary { steps: self.steps, max_reference_deviation: None },
        }
    }
}

/// Constant-amplitude ESC `ẋᵢ = √ω·a0ᵢ·(b₁ᵢ(f)û₁ᵢ + b₂ᵢ(f)û₂ᵢ)`.
pub fn run_baseline(spec: &EscSystemSpec, opts: &SimOptions) -> Result<TrajectoryLog> {
    let model = EscModel::compile(spec)?;
    run_baseline_model(&model, opts)
}

pub fn run_baseline_model(model: &EscModel, opts: &SimOptions) -> Result<TrajectoryLog> {
    let mut run = Runner::new(model, opts)?;
    let (n, dt) = (run.n, run.dt);
    let a = model.spec.a0.clone();
    let mut x = model.spec.x0.clone();
    let reference = opts.reference && model.spec.objective.has_oracle_gradient();
    let mut z = x.clone();
    let mut rk_x = Rk4::new(n);
    let mut rk_z = Rk4::new(n);
    let mut grad = vec![0.0; n];
    let mut log = run.log_template(RunMode::Baseline);
    let mut max_dev: f64 = 0.0;

    push_row(&mut log, &mut run, 0.0, &x, &a, None, reference.then(|| z.clone()));
    for k in 0..run.steps {
        let t = k as f64 * dt;
        rk_x.step(
            &mut |tt, xx, out| {
                model.esc_rhs(tt, xx, &a, out);
                Ok(())
            },
            t,
            &mut x,
            dt,
        )?;
        if reference {
            rk_z.step(&mut |_tt, zz, out| lbs_rhs_into(model, zz, &a, &mut grad, out), t, &mut z, dt)?;
            max_dev = max_dev.max(sup_dist(&x, &z));
        }
        let t_next = (k + 1) as f64 * dt;
        run.guard(t_next, &x)?;
        if (k + 1) % opts.log_stride == 0 {
            push_row(&mut log, &mut run, t_next, &x, &a, None, reference.then(|| z.clone()));
        }
    }
    if reference {
        log.summary.max_reference_deviation = Some(max_dev);
    }
    Ok(log)
}

fn push_row(log: &mut TrajectoryLog, run: &mut Runner<'_>, t: f64, x: &[f64], a: &[f64], j_est: Option<Vec<f64>>, zref: Option<Vec<f64>>) {
    let j_exact = run.exact(x, a);
    log.rows.push(LogRow {
        t,
        x: x.to_vec(),
        f: run.model.spec.objective.eval(x),
        a: a.to_vec(),
        j_est,
        j_exact,
        zref,
    });
}

fn sup_dist(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

/// Adaptive-amplitude ESC driven by the filter estimate.
pub fn run_proposed(spec: &EscSystemSpec, gcfg: &GekfConfig, opts: &SimOptions) -> Result<TrajectoryLog> {
    run_proposed_with(spec, gcfg, opts, JSource::Filter)
}

pub fn run_proposed_with(spec: &EscSystemSpec, gcfg: &GekfConfig, opts: &SimOptions, source: JSource) -> Result<TrajectoryLog> {
    let model = EscModel::compile(spec)?;
    run_proposed_model(&model, gcfg, opts, source)
}

/// Co-integrates `x` (amplitude frozen within each step), `a` under
/// `ȧ = −λ(a − J)` with `J` frozen within each step, and the filter
/// (propagated every step, updated every `n_meas` steps).
pub fn run_proposed_model(model: &EscModel, gcfg: &GekfConfig, opts: &SimOptions, source: JSource) -> Result<TrajectoryLog> {
    gcfg.validate()?;
    let mut run = Runner::new(model, opts)?;
    let (n, dt) = (run.n, run.dt);
    let spec = &model.spec;
    let reference = opts.reference && spec.objective.has_oracle_gradient();
    if source == JSource::Exact && !spec.objective.has_oracle_gradient() {
        return Err(EscError::Capability("exact J source needs an oracle gradient".into()));
    }
    let use_filter = source == JSource::Filter;

    let mut state = SimState { t: 0.0, x: spec.x0.clone(), a: spec.a0.clone(), u1: vec![0.0; n], u2: vec![0.0; n] };
    let mut z = state.x.clone();
    let floor: Vec<f64> = spec.a0.iter().map(|a0| gcfg.a_floor * a0).collect();
    let windows: Vec<usize> = (0..n).map(|i| ((spec.channel_period(i) / dt).round() as usize).max(1)).collect();
    let mut extractor = JExtractor::new(gcfg.smoothing, windows.clone());
    let mut exact_avg = JExtractor::new(true, windows);

    let mut f_prev = run.measure(&state.x);
    let mut filter = GekfState::new(n, gcfg, f_prev, 0.0);
    let mut j = match source {
        JSource::Constant(c) => vec![c; n],
        _ => vec![0.0; n],
    };

    let mut rk_x = Rk4::new(n);
    let mut rk_z = Rk4::new(n);
    let mut rk_a = Rk4::new(n);
    let mut grad = vec![0.0; n];
    let (mut ua1, mut ua2) = (vec![0.0; n], vec![0.0; n]);
    let (mut um1, mut um2) = (vec![0.0; n], vec![0.0; n]);
    let (mut ub1, mut ub2) = (vec![0.0; n], vec![0.0; n]);
    let mut a_meas = state.a.clone();
    let mut innovation = 0.0;
    let mut max_dev: f64 = 0.0;
    let mut log = run.log_template(RunMode::Proposed);

    push_row(&mut log, &mut run, 0.0, &state.x, &state.a, Some(j.clone()), reference.then(|| z.clone()));
    if use_filter {
        log.diagnostics.push(diag(&filter, innovation));
    }

    for k in 0..run.steps {
        let t = k as f64 * dt;
        let a_step = state.a.clone();

        // trapezoid on the stage grid t, t+dt/2, t+dt
        model.inputs(t, &a_step, &mut ua1, &mut ua2);
        model.inputs(t + 0.5 * dt, &a_step, &mut um1, &mut um2);
        model.inputs(t + dt, &a_step, &mut ub1, &mut ub2);
        for i in 0..n {
            state.u1[i] += 0.25 * dt * (ua1[i] + 2.0 * um1[i] + ub1[i]);
            state.u2[i] += 0.25 * dt * (ua2[i] + 2.0 * um2[i] + ub2[i]);
        }

        rk_x.step(
            &mut |tt, xx, out| {
                model.esc_rhs(tt, xx, &a_step, out);
                Ok(())
            },
            t,
            &mut state.x,
            dt,
        )?;
        if reference {
            rk_z.step(&mut |_tt, zz, out| lbs_rhs_into(model, zz, &a_step, &mut grad, out), t, &mut z, dt)?;
            max_dev = max_dev.max(sup_dist(&state.x, &z));
        }
        let j_step = j.clone();
        rk_a.step(
            &mut |_tt, aa, out| {
                for i in 0..n {
                    out[i] = -spec.lambda[i] * (aa[i] - j_step[i]);
                }
                Ok(())
            },
            t,
            &mut state.a,
            dt,
        )?;
        state.t = (k + 1) as f64 * dt;
        run.guard(state.t, &state.x)?;

        match source {
            JSource::Filter => {
                filter.propagate(gcfg, dt)?;
                if (k + 1) % gcfg.n_meas == 0 {
                    let f_new = run.measure(&state.x);
                    let info = filter.measurement_update(
                        gcfg,
                        model,
                        &Measurement { f_t2: f_new, f_t1: f_prev, u1: &state.u1, u2: &state.u2, a: &a_meas, a_floor: &floor },
                    )?;
                    innovation = info.innovation;
                    f_prev = f_new;
                    state.u1.iter_mut().for_each(|u| *u = 0.0);
                    state.u2.iter_mut().for_each(|u| *u = 0.0);
                    a_meas.copy_from_slice(&state.a);
                }
                j = extractor.extract_j(&filter).j;
            }
            JSource::Exact => {
                lbs_rhs_into(model, &state.x, &state.a, &mut grad, &mut run.jx)?;
                j = exact_avg.push(&run.jx);
            }
            JSource::Zero | JSource::Constant(_) => {}
        }

        if (k + 1) % opts.log_stride == 0 {
            push_row(&mut log, &mut run, state.t, &state.x, &state.a, Some(j.clone()), reference.then(|| z.clone()));
            if use_filter {
                log.diagnostics.push(diag(&filter, innovation));
            }
        }
    }
    if reference {
        log.summary.max_reference_deviation = Some(max_dev);
    }
    Ok(log)
}

fn diag(filter: &GekfState, innovation: f64) -> GekfDiag {
    GekfDiag {
        t: filter.t,
        x1: filter.x1().to_vec(),
        x2: filter.x2().to_vec(),
        x3: filter.x3(),
        trace: filter.trace(),
        innovation,
        min_eig: filter.min_eigenvalue(),
        asymmetry: filter.asymmetry(),
    }
}

/// Averaged system `żᵢ = −ν̂ᵢa0ᵢ²·∂f/∂zᵢ·b₀ᵢ(f) (+ ηᵢ(t))`.
pub fn run_lbs(spec: &EscSystemSpec, err: Option<&EstimationErrorModel>, opts: &SimOptions) -> Result<TrajectoryLog> {
    let model = EscModel::compile(spec)?;
    run_lbs_model(&model, err, opts)
}

pub fn run_lbs_model(model: &EscModel, err: Option<&EstimationErrorModel>, opts: &SimOptions) -> Result<TrajectoryLog> {
    if !model.spec.objective.has_oracle_gradient() {
        return Err(EscError::Capability("averaged-system run needs an oracle gradient".into()));
    }
    let mut run = Runner::new(model, opts)?;
    let (n, dt) = (run.n, run.dt);
    let a = model.spec.a0.clone();
    let mut z = model.spec.x0.clone();
    let mut rk = Rk4::new(n);
    let mut grad = vec![0.0; n];
    let mut log = run.log_template(RunMode::Lbs);
    let est = |t: f64, exact: &Option<Vec<f64>>| -> Option<Vec<f64>> {
        match (err, exact) {
            (Some(e), Some(j)) => Some(j.iter().map(|v| v + e.eval(t)).collect()),
            _ => None,
        }
    };

    let j0 = run.exact(&z, &a);
    let row0 = LogRow { t: 0.0, x: z.clone(), f: model.spec.objective.eval(&z), a: a.clone(), j_est: est(0.0, &j0), j_exact: j0, zref: None };
    log.rows.push(row0);
    for k in 0..run.steps {
        let t = k as f64 * dt;
        rk.step(
            &mut |tt, zz, out| {
                lbs_rhs_into(model, zz, &a, &mut grad, out)?;
                if let Some(e) = err {
                    let eta = e.eval(tt);
                    out.iter_mut().for_each(|v| *v += eta);
                }
                Ok(())
            },
            t,
            &mut z,
            dt,
        )?;
        let t_next = (k + 1) as f64 * dt;
        run.guard(t_next, &z)?;
        if (k + 1) % opts.log_stride == 0 {
            let jx = run.exact(&z, &a);
            log.rows.push(LogRow {
                t: t_next,
                x: z.clone(),
                f: model.spec.objective.eval(&z),
                a: a.clone(),
                j_est: est(t_next, &jx),
                j_exact: jx,
                zref: None,
            });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_examples() {
        let x = rk4_step(|_t, _x, o: &mut [f64]| { o[0] = 0.0; Ok(()) }, 0.0, &[3.5], 0.1).unwrap();
        assert_eq!(x, vec![3.5]);
        let x = rk4_step(|_t, _x, o: &mut [f64]| { o[0] = 1.0; Ok(()) }, 0.0, &[0.0], 0.1).unwrap();
        assert_eq!(x, vec![0.1]);

        // ẋ = −2αx, α = 0.5, to t = 1
        let mut x = vec![1.0];
        let mut rk = Rk4::new(1);
        for k in 0..1000 {
            rk.step(&mut |_t, xx: &[f64], o: &mut [f64]| { o[0] = -xx[0]; Ok(()) }, k as f64 * 1e-3, &mut x, 1e-3).unwrap();
        }
        assert!((x[0] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn rk4_reports_non_finite_stage() {
        let err = rk4_step(|_t, x: &[f64], o: &mut [f64]| { o[0] = 1.0 / (x[0] - 1.0); Ok(()) }, 0.0, &[1.0], 0.1);
        assert!(matches!(err, Err(EscError::Integration { .. })));
    }

    #[test]
    fn step_count_lands_on_horizon() {
        assert_eq!(step_count(1.0, 0.1), 10);
        assert_eq!(step_count(1.0, 0.3), 4);
    }
}
