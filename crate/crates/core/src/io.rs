//! CSV and JSON artifacts. Files are written to a temporary sibling and
//! renamed into place, so readers never see a partial file.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{EscError, Result};
use crate::sim::{LogRow, RunMode, RunSummary, TrajectoryLog};

/// `t,x_1..x_n,f,a_1..a_n,Jest_1..Jest_n,Jexact_1..Jexact_n,zref_1..zref_n`.
pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x_{i}")));
    h.push("f".into());
    for prefix in ["a", "Jest", "Jexact", "zref"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h
}

pub fn diagnostics_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["xbar1", "xbar2"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(["xbar3", "trace", "innovation", "min_eig", "asymmetry"].map(String::from));
    h
}

fn push_opt(rec: &mut Vec<String>, v: &Option<Vec<f64>>, n: usize) {
    match v {
        Some(v) => rec.extend(v.iter().map(f64::to_string)),
        None => rec.extend(std::iter::repeat_n(String::new(), n)),
    }
}

pub fn write_trajectory<W: Write>(log: &TrajectoryLog, w: W) -> Result<()> {
    let n = log.n;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trajectory_header(n))?;
    let mut rec = Vec::with_capacity(4 * n + 2);
    for r in &log.rows {
        rec.clear();
        rec.push(r.t.to_string());
        rec.extend(r.x.iter().map(f64::to_string));
        rec.push(r.f.to_string());
        rec.extend(r.a.iter().map(f64::to_string));
        push_opt(&mut rec, &r.j_est, n);
        push_opt(&mut rec, &r.j_exact, n);
        push_opt(&mut rec, &r.zref, n);
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_diagnostics<W: Write>(log: &TrajectoryLog, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(diagnostics_header(log.n))?;
    for d in &log.diagnostics {
        let mut rec = vec![d.t.to_string()];
        rec.extend(d.x1.iter().chain(&d.x2).map(f64::to_string));
        rec.extend([d.x3, d.trace, d.innovation, d.min_eig, d.asymmetry].map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trajectory CSV back. Dither periods are not stored in the file;
/// pass them from the scenario, or `None` to treat every sample as its own
/// period.
pub fn read_trajectory<R: Read>(r: R, periods: Option<Vec<f64>>) -> Result<TrajectoryLog> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let n = header.iter().filter(|h| h.starts_with("x_")).count();
    if n == 0 || header != trajectory_header(n) {
        return Err(EscError::Input(format!("unexpected trajectory header: {}", header.join(","))));
    }
    if let Some(p) = periods.as_ref().filter(|p| p.len() != n) {
        return Err(EscError::Input(format!("{} channel periods for a {n}-channel trajectory", p.len())));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| -> Result<Option<f64>> {
            let s = rec.get(k).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| EscError::Input(format!("row {}: `{s}` in column {} is not a number", line + 2, header[k])))
        };
        let required = |k: usize| field(k)?.ok_or_else(|| EscError::Input(format!("row {}: column {} is empty", line + 2, header[k])));
        let block = |start: usize| -> Result<Vec<f64>> { (start..start + n).map(required).collect() };
        let optional = |start: usize| -> Result<Option<Vec<f64>>> {
            let v: Vec<Option<f64>> = (start..start + n).map(field).collect::<Result<_>>()?;
            Ok(v.into_iter().collect())
        };
        rows.push(LogRow {
            t: required(0)?,
            x: block(1)?,
            f: required(n + 1)?,
            a: block(n + 2)?,
            j_est: optional(2 * n + 2)?,
            j_exact: optional(3 * n + 2)?,
            zref: optional(4 * n + 2)?,
        });
    }
    if rows.len() < 2 {
        return Err(EscError::Input("trajectory needs at least two rows".into()));
    }
    if rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(EscError::Input("trajectory times are not strictly increasing".into()));
    }
    let dt_log = rows[1].t - rows[0].t;
    let periods = periods.unwrap_or_else(|| vec![dt_log; n]);
    let mode = if rows[0].j_est.is_some() { RunMode::Proposed } else { RunMode::Baseline };
    Ok(TrajectoryLog { mode, n, dt_log, periods, rows, diagnostics: Vec::new(), summary: RunSummary::default() })
}

pub fn read_trajectory_file(path: &Path, periods: Option<Vec<f64>>) -> Result<TrajectoryLog> {
    read_trajectory(std::fs::File::open(path)?, periods)
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| EscError::Io(e.error))?;
    Ok(())
}

pub fn save_trajectory(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectory(log, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn save_diagnostics(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_diagnostics(log, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
