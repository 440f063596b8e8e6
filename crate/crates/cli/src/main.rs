use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lbesc::analysis::{
    check_b2, check_bound_log, compare, metrics, AgentMetrics, B2Report, BoundCheckResult, GrowthConstants, Report,
    ReportParams,
};
use lbesc::io::{read_trajectory_file, save_diagnostics, save_json, save_trajectory, write_atomic};
use lbesc::par::Execution;
use lbesc::scenario::{preset, resolve, Scenario, PRESETS};
use lbesc::sim::RunMode;
use lbesc::sweep::{run_scenario, sweep, AgentRuns, Selection, SweepParam, SweepSummary};
use lbesc::EscError;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "lbesc", version, about = "Extremum seeking with Lie-bracket estimation and amplitude adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List preset scenarios.
    List,
    /// Run a scenario and write trajectories, a report and the resolved config.
    Run(RunArgs),
    /// Run a scenario once per parameter value.
    Sweep(SweepArgs),
    /// Check |J(t)| <= 1/t^p on a trajectory CSV.
    CheckBound(CheckBoundArgs),
    /// Check the vanishing-oscillation condition on a scenario's vector fields.
    CheckB2(CheckB2Args),
    /// Compare a baseline and a proposed trajectory CSV.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Proposed,
    Lbs,
    Both,
}

impl From<ModeArg> for Selection {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Selection::Baseline,
            ModeArg::Proposed => Selection::Proposed,
            ModeArg::Lbs => Selection::Lbs,
            ModeArg::Both => Selection::Both,
        }
    }
}

#[derive(Args)]
struct Overrides {
    /// Integrator step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time in seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// Seed for the measurement-noise generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Exponent of the 1/t^p bound used in reports.
    #[arg(long)]
    p: Option<f64>,
    /// Bound-check the oracle J instead of the estimate.
    #[arg(long)]
    use_exact: bool,
    /// Run jobs one after another instead of on a thread pool.
    #[arg(long)]
    sequential: bool,
}

impl Overrides {
    fn apply(&self, sc: &mut Scenario) {
        if let Some(dt) = self.dt {
            sc.set_dt(dt);
        }
        if let Some(h) = self.horizon {
            sc.set_horizon(h);
        }
        if let Some(seed) = self.seed {
            sc.options.seed = seed;
        }
        if let Some(p) = self.p {
            sc.analysis.p = p;
        }
        if self.use_exact {
            sc.analysis.use_exact_j = true;
        }
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Preset name or path to a scenario TOML file.
    scenario: String,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    /// Base dither frequency (agents keep their multipliers).
    #[arg(long)]
    omega: Option<f64>,
    /// Adaptation rate for every channel.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    scenario: String,
    /// Comma-separated base frequencies.
    #[arg(long, value_delimiter = ',', num_args = 1.., conflicts_with = "lambda", required_unless_present = "lambda")]
    omega: Option<Vec<f64>>,
    /// Comma-separated adaptation rates.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    lambda: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "baseline")]
    mode: ModeArg,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckBoundArgs {
    /// Trajectory CSV with Jest (or Jexact) columns.
    csv: PathBuf,
    #[arg(long, default_value_t = 1.05)]
    p: f64,
    /// Samples before this time are ignored.
    #[arg(long, default_value_t = 1.0)]
    t_min: f64,
    /// Check the Jexact columns.
    #[arg(long)]
    use_exact: bool,
    /// Also fail when t* exceeds this time.
    #[arg(long)]
    t_star_max: Option<f64>,
    /// Write the result as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckB2Args {
    scenario: String,
    /// Grid points probed per agent.
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    baseline: PathBuf,
    proposed: PathBuf,
    /// Scenario supplying x*, dither periods and analysis settings.
    #[arg(long)]
    scenario: String,
    /// Agent of a multi-agent scenario (default: the first).
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::List => list(),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::CheckBound(a) => check_bound_cmd(a),
        Command::CheckB2(a) => check_b2_cmd(a),
        Command::Compare(a) => compare_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &EscError) -> u8 {
    match e {
        EscError::Config(_) | EscError::Lookup { .. } | EscError::Input(_) | EscError::TomlDe(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

type CmdResult = lbesc::Result<bool>;

fn list() -> CmdResult {
    for name in PRESETS {
        let sc = preset(name)?;
        println!("{name:8} {}", sc.description);
    }
    Ok(true)
}

fn load(name: &str) -> lbesc::Result<Scenario> {
    let sc = resolve(name)?;
    sc.validate()?;
    Ok(sc)
}

fn stem(sc: &Scenario, agent: &str) -> String {
    if sc.agents.len() > 1 {
        format!("{}_{agent}", sc.name)
    } else {
        sc.name.clone()
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> lbesc::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_runs(sc: &Scenario, runs: &[AgentRuns], out: &Path, prefix: &str) -> lbesc::Result<()> {
    for r in runs {
        for mode in [RunMode::Baseline, RunMode::Proposed, RunMode::Lbs] {
            if let Some(log) = r.get(mode) {
                let base = format!("{prefix}{}_{}", stem(sc, &r.agent), mode.as_str());
                save_trajectory(log, &out.join(format!("{base}.csv")))?;
                if !log.diagnostics.is_empty() {
                    save_diagnostics(log, &out.join(format!("{base}_gekf.csv")))?;
                }
            }
        }
    }
    Ok(())
}

fn build_report(sc: &Scenario, runs: &[AgentRuns], selection: Selection) -> lbesc::Result<Report> {
    let first = &sc.agents[0].spec;
    let params = ReportParams {
        mode: selection.as_str().to_string(),
        omega: sc.base_omega(),
        lambda: first.lambda.clone(),
        dt: first.step(),
        horizon: first.horizon,
        seed: sc.options.seed,
        p: sc.analysis.p,
        t_min: sc.analysis.t_min,
        window: sc.analysis.window,
        use_exact_j: sc.analysis.use_exact_j,
    };
    let mut report = Report { scenario: sc.name.clone(), params, metrics: BTreeMap::new(), bound_check: BTreeMap::new(), b2: BTreeMap::new() };
    let st = &sc.analysis;
    for (agent, r) in sc.agents.iter().zip(runs) {
        let spec = &agent.spec;
        let Some(x_star) = spec.objective.x_star.clone() else { continue };
        let m = |log: Option<&lbesc::sim::TrajectoryLog>| log.map(|l| metrics(l, &x_star, st.window, st.settle_band));
        let mut am = AgentMetrics { baseline: m(r.baseline.as_ref()), proposed: m(r.proposed.as_ref()), lbs: m(r.lbs.as_ref()), envelope_ratio: None };
        if let (Some(b), Some(p)) = (&r.baseline, &r.proposed) {
            am.envelope_ratio = Some(compare(b, p, &x_star, st)?.envelope_ratio);
        }
        if let Some(p) = &r.proposed {
            report.bound_check.insert(agent.name.clone(), check_bound_log(p, st.p, st.t_min, st.use_exact_j)?);
        }
        report.metrics.insert(agent.name.clone(), am);
        report.b2.insert(agent.name.clone(), check_b2(spec, 400, GrowthConstants::default())?);
    }
    Ok(report)
}

fn run(a: RunArgs) -> CmdResult {
    let mut sc = load(&a.scenario)?;
    if let Some(w) = a.omega {
        sc.set_omega(w);
    }
    if let Some(l) = a.lambda {
        sc.set_lambda(l);
    }
    a.overrides.apply(&mut sc);
    sc.validate()?;
    let selection = Selection::from(a.mode);
    let runs = run_scenario(&sc, selection, a.overrides.execution())?;

    write_runs(&sc, &runs, &a.out, "")?;
    let report = build_report(&sc, &runs, selection)?;
    save_json(&report, &a.out.join(format!("{}_report.json", sc.name)))?;
    write_atomic(&a.out.join(format!("{}_config.toml", sc.name)), sc.to_toml()?.as_bytes())?;

    for (name, m) in &report.metrics {
        for (label, rm) in [("baseline", &m.baseline), ("proposed", &m.proposed), ("lbs", &m.lbs)] {
            if let Some(rm) = rm {
                println!(
                    "{}/{name} {label}: final error {:.3e}, envelope {:?}, final amplitude {:?}",
                    sc.name, rm.final_error, rm.envelope, rm.final_amplitude
                );
            }
        }
    }
    Ok(true)
}

fn sweep_cmd(a: SweepArgs) -> CmdResult {
    let mut sc = load(&a.scenario)?;
    a.overrides.apply(&mut sc);
    let (param, values) = match (a.omega, a.lambda) {
        (Some(v), None) => (SweepParam::Omega, v),
        (None, Some(v)) => (SweepParam::Lambda, v),
        _ => return Err(EscError::Input("give exactly one of --omega or --lambda".into())),
    };
    let selection = Selection::from(a.mode);
    let points = sweep(&sc, param, &values, selection, a.overrides.execution())?;
    let label = match param {
        SweepParam::Omega => "omega",
        SweepParam::Lambda => "lambda",
    };
    for pt in &points {
        write_runs(&pt.scenario, &pt.runs, &a.out, &format!("{label}{}_", pt.value))?;
    }
    let summary = SweepSummary::new(&sc.name, param, selection, &points);
    save_json(&summary, &a.out.join(format!("{}_sweep.json", sc.name)))?;
    write_atomic(&a.out.join(format!("{}_config.toml", sc.name)), sc.to_toml()?.as_bytes())?;
    for row in &summary.rows {
        let dev = row.deviation.map_or("-".to_string(), |d| format!("{d:.4e}"));
        println!("{label}={} {}/{}: deviation {dev}, final error {:.3e}", row.value, row.agent, row.mode.as_str(), row.final_error);
    }
    Ok(true)
}

fn check_bound_cmd(a: CheckBoundArgs) -> CmdResult {
    let log = read_trajectory_file(&a.csv, None)?;
    let res: BoundCheckResult = check_bound_log(&log, a.p, a.t_min, a.use_exact)?;
    print_json(&res)?;
    if let Some(out) = &a.out {
        save_json(&res, out)?;
    }
    let within = match (a.t_star_max, res.t_star()) {
        (Some(max), Some(t)) => t <= max,
        _ => true,
    };
    Ok(res.holds() && within)
}

fn check_b2_cmd(a: CheckB2Args) -> CmdResult {
    let sc = load(&a.scenario)?;
    let reports: BTreeMap<String, B2Report> = sc
        .agents
        .iter()
        .map(|ag| Ok((ag.name.clone(), check_b2(&ag.spec, a.samples, GrowthConstants::default())?)))
        .collect::<lbesc::Result<_>>()?;
    print_json(&reports)?;
    if let Some(out) = &a.out {
        save_json(&reports, out)?;
    }
    for (name, r) in &reports {
        for e in r.elements.iter().filter(|e| e.contradiction) {
            println!(
                "{name}: b{}{} = {} at the extremum where f - f* = 0, so the inequality becomes |{}| <= 0",
                e.s,
                e.channel + 1,
                e.value_at_extremum,
                e.value_at_extremum.abs()
            );
        }
    }
    Ok(reports.values().all(B2Report::passes))
}

fn compare_cmd(a: CompareArgs) -> CmdResult {
    let sc = load(&a.scenario)?;
    let agent = match &a.agent {
        Some(name) => sc.agents.iter().find(|ag| &ag.name == name).ok_or_else(|| EscError::Lookup {
            name: name.clone(),
            available: sc.agents.iter().map(|ag| ag.name.as_str()).collect::<Vec<_>>().join(", "),
        })?,
        None => &sc.agents[0],
    };
    let spec = &agent.spec;
    let x_star = spec.objective.x_star.clone().ok_or_else(|| EscError::Capability("scenario has no x*".into()))?;
    let periods: Vec<f64> = (0..spec.n()).map(|i| spec.channel_period(i)).collect();
    let baseline = read_trajectory_file(&a.baseline, Some(periods.clone()))?;
    let proposed = read_trajectory_file(&a.proposed, Some(periods))?;
    let report = compare(&baseline, &proposed, &x_star, &sc.analysis)?;
    print_json(&report)?;
    if let Some(out) = &a.out {
        save_json(&report, out)?;
    }
    Ok(true)
}
