//! Simulation runs and their files: `trace.csv`, `events.csv` and `report.json`.
//!
//! The report is recomputed from the written CSVs, never from the in-memory trace.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hybrid_observer::matrix::{mixed_norm_partitioned, Vector};
use hybrid_observer::sim::{measure_decay, mismatch_bound, oracle_recursion, theorem_bound, OracleInput, OracleStep};
use hybrid_observer::{run_simulation, LtiPlant, Mat, Mode, ResilienceKind, SimSetup, SimTrace, TimingConfig};

use crate::certificate::CertificateFile;
use crate::scenario::{Built, Scenario, SCHEMA_VERSION};

pub const TRACE_FILE: &str = "trace.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const REPORT_FILE: &str = "report.json";
pub const EVENTS_HEADER: &str = "s,t_s,e_norm,bound_theorem,A_s_norm,B_s_norm,G_s_norm";

/// Fraction of the resolvable events used by the decay fit.
pub const TAIL_FRACTION: f64 = 0.5;

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NaN".to_string()
    }
}

/// A finished run held in memory.
pub struct Run {
    pub trace: SimTrace,
    pub timing: TimingConfig,
    pub gains: Vec<Mat>,
    /// Present when the error recursion applies (no outages).
    pub oracle: Option<Vec<OracleStep>>,
    pub rows: Vec<EventRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRow {
    pub s: usize,
    pub t: f64,
    pub e_norm: f64,
    pub bound: f64,
    pub a_norm: f64,
    pub b_norm: f64,
    pub g_norm: f64,
}

/// Runs the scenario under `cert`; `sample_step` overrides the scenario's grid.
pub fn execute(scenario: &Scenario, built: &Built, cert: &CertificateFile, sample_step: Option<f64>) -> Result<Run> {
    cert.check_matches(scenario)?;
    let timing = cert.timing();
    let gains = cert.gains()?;
    let trace = run_simulation(&SimSetup {
        plant: &built.plant,
        decs: &built.decs,
        gains: &gains,
        schedule: &built.schedule,
        timing: &timing,
        mode: built.mode,
        averaging: built.averaging,
        events: &built.events,
        lost_agents: built.lost_agents,
        w0: &built.w0,
        xhat0: &built.xhat0,
        horizon: scenario.horizon,
        sample_step: Some(sample_step.unwrap_or(scenario.output.sample_step)),
        log_rounds: 0,
    })?;
    let oracle = oracle_for(built, &gains, &timing, trace.events.len() - 1)?;
    let rows = event_rows(built, cert, &trace, oracle.as_deref());
    Ok(Run { trace, timing, gains, oracle, rows })
}

/// The error recursion for the full agent set. Forcing noise does not enter the
/// matrices, so they are computed on the noise-free plant; predicted errors are
/// then meaningless and callers compare them only for noise-free plants.
pub fn oracle_for(built: &Built, gains: &[Mat], timing: &TimingConfig, events: usize) -> Result<Option<Vec<OracleStep>>> {
    let p = &built.plant;
    let plant = LtiPlant::new(p.a().clone(), p.channels().to_vec(), p.x0().clone(), None)?;
    Ok(Some(oracle_recursion(&OracleInput {
        plant: &plant,
        decs: &built.decs,
        gains,
        schedule: &built.schedule,
        timing,
        mode: built.mode,
        averaging: built.averaging,
        w0: &built.w0,
        xhat0: &built.xhat0,
        events,
    })?))
}

fn masked_norm(parts: &[Option<Vector>], keep: impl Fn(usize) -> bool) -> f64 {
    parts.iter().enumerate().filter(|(i, _)| keep(*i)).filter_map(|(_, e)| e.as_ref().map(|v| v.norm())).fold(0.0, f64::max)
}

/// Per-event norms and bounds.
///
/// The bound is anchored at event 0 and re-anchored on the survivors at the
/// last event before each vertex loss. After a vertex rejoins nothing is
/// certified and the bound is NaN; recursion norms are NaN once the agent set changes.
pub fn event_rows(built: &Built, cert: &CertificateFile, trace: &SimTrace, oracle: Option<&[OracleStep]>) -> Vec<EventRow> {
    let period = cert.timing.period;
    let lambda = cert.lambda;
    let eps_g = if built.mode == Mode::Mismatch {
        cert.timing.epsilons.iter().copied().fold(0.0, f64::max) * cert.g
    } else {
        0.0
    };
    let xnorms: Vec<f64> = trace.events.iter().map(|r| r.truth.as_ref().map_or(f64::NAN, |x| x.norm())).collect();
    let first_change = built.events.iter().map(|e| (e.time / period).floor() as usize).min();
    let n = trace.n;
    let m = trace.m;
    let row_sizes = vec![n; m];
    let w_sizes: Vec<usize> = built.decs.iter().map(|d| d.observable_dim()).collect();

    let mut anchor = Some((0usize, masked_norm(&trace.events[0].errors, |_| true), masked_norm(&trace.events[0].local_errors, |_| true)));
    let mut pending: Vec<_> = built.events.clone();
    pending.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut rows = Vec::with_capacity(trace.events.len());
    for rec in &trace.events {
        let s = rec.s;
        let e_norm = masked_norm(&rec.errors, |_| true);
        // Rows are written before this event's outages re-anchor, so `s ≥ s0`.
        let bound = match anchor {
            Some((s0, e0, eb0)) if eps_g > 0.0 => mismatch_bound(s - s0, lambda, period, e0, eb0, cert.d, eps_g, &xnorms[s0..]),
            Some((s0, e0, eb0)) => theorem_bound(s - s0, lambda, period, e0, eb0, cert.d),
            None => f64::NAN,
        };
        let (a_norm, b_norm, g_norm) = match (oracle, s) {
            (Some(steps), s) if s >= 1 && first_change.is_none_or(|c| s <= c) => {
                let st = &steps[s - 1];
                (
                    mixed_norm_partitioned(&st.a, &row_sizes, &row_sizes),
                    mixed_norm_partitioned(&st.b, &row_sizes, &w_sizes),
                    mixed_norm_partitioned(&st.g, &row_sizes, &[n]),
                )
            }
            _ => (f64::NAN, f64::NAN, f64::NAN),
        };
        rows.push(EventRow { s, t: rec.time, e_norm, bound, a_norm, b_norm, g_norm });

        // Outages taking effect at the next latch (after this event's reset).
        let next = (s + 1) as f64 * period;
        while pending.first().is_some_and(|e| e.time < next + 1e-12 * period.max(1.0) && e.time >= s as f64 * period) {
            let ev = pending.remove(0);
            anchor = match (ev.kind, anchor) {
                (ResilienceKind::Lose, Some(_)) => {
                    let survivors: Vec<bool> = (0..m)
                        .map(|i| {
                            i != ev.agent
                                && !built.events.iter().any(|o| {
                                    o.agent == i && o.kind == ResilienceKind::Lose && o.time <= ev.time
                                })
                        })
                        .collect();
                    let keep = |i: usize| survivors[i];
                    Some((s, masked_norm(&rec.errors, keep), masked_norm(&rec.local_errors, keep)))
                }
                _ => None,
            };
        }
    }
    rows
}

/// Writes `trace.csv` and `events.csv` into `dir`.
pub fn write_csvs(run: &Run, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let trace = &run.trace;
    let (n, m) = (trace.n, trace.m);
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|k| format!("x{k}")));
    for i in 1..=m {
        header.extend((1..=n).map(|k| format!("xhat{i}_{k}")));
    }
    header.extend((1..=m).map(|i| format!("err{i}")));
    out.push_str(&header.join(","));
    out.push('\n');
    for smp in &trace.samples {
        let mut cells = vec![fmt(smp.t)];
        cells.extend(smp.x.iter().map(|v| fmt(*v)));
        for i in 0..m {
            if smp.active[i] {
                cells.extend(smp.estimates[i].iter().map(|v| fmt(*v)));
            } else {
                cells.extend((0..n).map(|_| fmt(f64::NAN)));
            }
        }
        cells.extend((0..m).map(|i| fmt(smp.error(i).map_or(f64::NAN, |e| e.norm()))));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(dir.join(TRACE_FILE), out)?;

    let mut ev = String::from(EVENTS_HEADER);
    ev.push('\n');
    for r in &run.rows {
        writeln!(
            ev,
            "{},{},{},{},{},{},{}",
            r.s,
            fmt(r.t),
            fmt(r.e_norm),
            fmt(r.bound),
            fmt(r.a_norm),
            fmt(r.b_norm),
            fmt(r.g_norm)
        )
        .expect("writing to a String");
    }
    std::fs::write(dir.join(EVENTS_FILE), ev)?;
    Ok(())
}

/// Reads `events.csv` back.
pub fn read_events(path: &Path) -> Result<Vec<EventRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(EVENTS_HEADER) {
        bail!("{} does not start with the events header", path.display());
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 7 {
                bail!("line {} of {} has {} cells", k + 2, path.display(), cells.len());
            }
            let f = |j: usize| cells[j].parse::<f64>().with_context(|| format!("line {}: {:?}", k + 2, cells[j]));
            Ok(EventRow {
                s: cells[0].parse().with_context(|| format!("line {}: event index", k + 2))?,
                t: f(1)?,
                e_norm: f(2)?,
                bound: f(3)?,
                a_norm: f(4)?,
                b_norm: f(5)?,
                g_norm: f(6)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub certificate: CertificateFile,
    pub events: usize,
    /// Least-squares decay rate of `e_norm` (positive means decaying).
    pub measured_decay_rate: Option<f64>,
    pub decay_note: Option<String>,
    /// Events where `e_norm` exceeds a finite bound.
    pub bound_violations: usize,
    pub bound_checked_events: usize,
    /// The bound is certified: certified q and ρ, and no forcing noise.
    pub bound_certified: bool,
    pub files: Vec<FileEntry>,
}

fn entry(dir: &Path, name: &str) -> Result<FileEntry> {
    let bytes = std::fs::read(dir.join(name)).with_context(|| format!("reading {name}"))?;
    let digest = Sha256::digest(&bytes);
    Ok(FileEntry {
        name: name.to_string(),
        bytes: bytes.len() as u64,
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

pub fn decay_points(rows: &[EventRow]) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.t, r.e_norm)).collect()
}

/// Errors below this are rounding in `x̂ − x`, even against a zero bound.
pub const BOUND_FLOOR: f64 = 1e-9;

/// `(violations, rows with a finite bound)`.
pub fn count_violations(rows: &[EventRow]) -> (usize, usize) {
    let checked: Vec<&EventRow> = rows.iter().filter(|r| r.bound.is_finite()).collect();
    (checked.iter().filter(|r| !(r.e_norm <= r.bound + BOUND_FLOOR)).count(), checked.len())
}

/// Builds the report from the CSVs already in `dir`.
pub fn report_from_dir(dir: &Path, cert: &CertificateFile, noise: bool) -> Result<RunReport> {
    let rows = read_events(&dir.join(EVENTS_FILE))?;
    let (measured, note) = match measure_decay(&decay_points(&rows), TAIL_FRACTION) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (violations, checked) = count_violations(&rows);
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        certificate: cert.clone(),
        events: rows.len(),
        measured_decay_rate: measured,
        decay_note: note,
        bound_violations: violations,
        bound_checked_events: checked,
        bound_certified: cert.q_certified && !noise,
        files: vec![entry(dir, TRACE_FILE)?, entry(dir, EVENTS_FILE)?],
    })
}

/// Simulates, writes the CSVs and the report, and returns the report.
pub fn simulate_to_dir(
    scenario: &Scenario,
    built: &Built,
    cert: &CertificateFile,
    dir: &Path,
    sample_step: Option<f64>,
) -> Result<(Run, RunReport)> {
    let run = execute(scenario, built, cert, sample_step)?;
    write_csvs(&run, dir)?;
    let report = report_from_dir(dir, cert, built.plant.noise().is_some())?;
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(dir.join(REPORT_FILE), text + "\n")?;
    Ok((run, report))
}

/// `--out`, then `HYBRID_OBSERVER_OUT`, then the scenario's `output.dir`, then `out/<name>`.
pub fn output_dir(flag: Option<&Path>, scenario: &Scenario) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(crate::OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    if let Some(d) = &scenario.output.dir {
        return PathBuf::from(d);
    }
    let name = if scenario.name.is_empty() { "run" } else { scenario.name.as_str() };
    PathBuf::from("out").join(name)
}
