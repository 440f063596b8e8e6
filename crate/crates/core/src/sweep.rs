//! Scenario runs and parameter sweeps. Every (point, agent, mode) triple is
//! an independent job.

use serde::{Deserialize, Serialize};

use crate::analysis::metrics;
use crate::error::{EscError, Result};
use crate::par::{self, Execution};
use crate::scenario::Scenario;
use crate::sim::{run_baseline, run_lbs, run_proposed, RunMode, TrajectoryLog};

/// Which runs to perform for each agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Baseline,
    Proposed,
    Lbs,
    /// Baseline and proposed.
    Both,
}

impl Selection {
    pub fn modes(self) -> &'static [RunMode] {
        match self {
            Selection::Baseline => &[RunMode::Baseline],
            Selection::Proposed => &[RunMode::Proposed],
            Selection::Lbs => &[RunMode::Lbs],
            Selection::Both => &[RunMode::Baseline, RunMode::Proposed],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Selection::Baseline => "baseline",
            Selection::Proposed => "proposed",
            Selection::Lbs => "lbs",
            Selection::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRuns {
    pub agent: String,
    pub baseline: Option<TrajectoryLog>,
    pub proposed: Option<TrajectoryLog>,
    pub lbs: Option<TrajectoryLog>,
}

impl AgentRuns {
    pub fn get(&self, mode: RunMode) -> Option<&TrajectoryLog> {
        match mode {
            RunMode::Baseline => self.baseline.as_ref(),
            RunMode::Proposed => self.proposed.as_ref(),
            RunMode::Lbs => self.lbs.as_ref(),
        }
    }

    fn slot(&mut self, mode: RunMode) -> &mut Option<TrajectoryLog> {
        match mode {
            RunMode::Baseline => &mut self.baseline,
            RunMode::Proposed => &mut self.proposed,
            RunMode::Lbs => &mut self.lbs,
        }
    }
}

fn run_one(sc: &Scenario, agent: usize, mode: RunMode) -> Result<TrajectoryLog> {
    let spec = &sc.agents[agent].spec;
    match mode {
        RunMode::Baseline => run_baseline(spec, &sc.options),
        RunMode::Proposed => run_proposed(spec, &sc.gekf, &sc.options),
        RunMode::Lbs => run_lbs(spec, None, &sc.options),
    }
}

fn run_many(scenarios: &[Scenario], selection: Selection, exec: Execution) -> Result<Vec<Vec<AgentRuns>>> {
    let jobs: Vec<(usize, usize, RunMode)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(p, sc)| (0..sc.agents.len()).flat_map(move |a| selection.modes().iter().map(move |m| (p, a, *m))))
        .collect();
    let logs = par::map(exec, &jobs, |(p, a, m)| run_one(&scenarios[*p], *a, *m));

    let mut out: Vec<Vec<AgentRuns>> = scenarios
        .iter()
        .map(|sc| {
            sc.agents.iter().map(|a| AgentRuns { agent: a.name.clone(), baseline: None, proposed: None, lbs: None }).collect()
        })
        .collect();
    for ((p, a, m), log) in jobs.into_iter().zip(logs) {
        *out[p][a].slot(m) = Some(log?);
    }
    Ok(out)
}

/// Runs the selected modes for every agent of the scenario.
pub fn run_scenario(sc: &Scenario, selection: Selection, exec: Execution) -> Result<Vec<AgentRuns>> {
    sc.validate()?;
    Ok(run_many(std::slice::from_ref(sc), selection, exec)?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    /// Base frequency; agents keep their multipliers.
    Omega,
    Lambda,
}

impl SweepParam {
    pub fn apply(self, sc: &mut Scenario, value: f64) {
        match self {
            SweepParam::Omega => sc.set_omega(value),
            SweepParam::Lambda => sc.set_lambda(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub scenario: Scenario,
    pub runs: Vec<AgentRuns>,
}

pub fn sweep(base: &Scenario, param: SweepParam, values: &[f64], selection: Selection, exec: Execution) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(EscError::Input("sweep needs at least one value".into()));
    }
    let scenarios = values
        .iter()
        .map(|v| {
            let mut sc = base.clone();
            param.apply(&mut sc, *v);
            sc.validate()?;
            Ok(sc)
        })
        .collect::<Result<Vec<_>>>()?;
    let runs = run_many(&scenarios, selection, exec)?;
    Ok(values.iter().zip(scenarios).zip(runs).map(|((v, scenario), runs)| SweepPoint { value: *v, scenario, runs }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub agent: String,
    pub mode: RunMode,
    /// Sup-norm distance to the co-integrated averaged trajectory.
    pub deviation: Option<f64>,
    pub final_error: f64,
    pub settling_time: Option<f64>,
    pub final_amplitude: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scenario: String,
    pub parameter: SweepParam,
    pub selection: Selection,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn new(name: &str, param: SweepParam, selection: Selection, points: &[SweepPoint]) -> Self {
        let mut rows = Vec::new();
        for pt in points {
            for (agent, runs) in pt.scenario.agents.iter().zip(&pt.runs) {
                let x_star = agent.spec.objective.x_star.clone().unwrap_or_else(|| vec![f64::NAN; agent.spec.n()]);
                for mode in selection.modes() {
                    if let Some(log) = runs.get(*mode) {
                        let m = metrics(log, &x_star, pt.scenario.analysis.window, pt.scenario.analysis.settle_band);
                        rows.push(SweepRow {
                            value: pt.value,
                            agent: agent.name.clone(),
                            mode: *mode,
                            deviation: log.summary.max_reference_deviation,
                            final_error: m.final_error,
                            settling_time: m.settling_time,
                            final_amplitude: m.final_amplitude,
                        });
                    }
                }
            }
        }
        Self { scenario: name.to_string(), parameter: param, selection, rows }
    }

    /// Deviations of one agent and mode in sweep order.
    pub fn deviations(&self, agent: &str, mode: RunMode) -> Vec<Option<f64>> {
        self.rows.iter().filter(|r| r.agent == agent && r.mode == mode).map(|r| r.deviation).collect()
    }
}
