//! Command-line front end for the hybrid observer: scenario files in, certificates,
//! CSV traces and reports out.

// `!(x <= y)` is used on purpose: NaN must fail the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod run;
pub mod scenario;
pub mod verify;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use hybrid_observer::design::resilience_qstar;

pub use certificate::{design, resolve_timing, to_file, CertificateFile};
pub use run::{output_dir, report_from_dir, simulate_to_dir, RunReport};
pub use scenario::{Built, Scenario};
pub use verify::{verify, Check, Status, VerifyReport};

/// Overrides every output directory when set.
pub const OUT_ENV: &str = "HYBRID_OBSERVER_OUT";
pub const CERTIFICATE_FILE: &str = "certificate.json";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// The scenario cannot be designed or run as given.
    pub const INFEASIBLE: i32 = 1;
    /// A check ran and failed.
    pub const CHECK_FAILED: i32 = 2;
}

/// What a command printed and how the process should exit.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    pub text: String,
}

fn load(path: &Path) -> Result<(Scenario, Built)> {
    let scenario = Scenario::load(path)?;
    let built = scenario.build().with_context(|| format!("scenario {}", path.display()))?;
    Ok((scenario, built))
}

pub fn cmd_design(path: &Path, out: Option<&Path>) -> Result<(Outcome, PathBuf)> {
    let (scenario, built) = load(path)?;
    let (cert, timing) = design(&scenario, &built)?;
    let file = to_file(&scenario, &built, &cert, &timing);
    let dir = output_dir(out, &scenario);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let cert_path = dir.join(CERTIFICATE_FILE);
    file.save(&cert_path)?;

    let mut text = String::new();
    writeln!(text, "rho       {:.12}{}", file.rho, if file.rho_certified { "" } else { " (sampled, not certified)" })?;
    writeln!(text, "alpha     {:.12}", file.alpha)?;
    if let Some(s) = file.sigma {
        writeln!(text, "sigma     {s:.12}")?;
    }
    writeln!(text, "p         {}", file.p)?;
    writeln!(text, "q bound   {} (straight){}", file.q_straight, file.q_convex.map_or(String::new(), |q| format!(", {q} (convex)")))?;
    if let Some(r) = &file.q_star {
        writeln!(text, "q*        {} (vbar = {})", r.q_star, r.vbar)?;
    }
    writeln!(text, "q         {}{}", file.q, if file.q_certified { "" } else { " (not certified)" })?;
    writeln!(text, "c_i       {:?}", file.observer_constants)?;
    writeln!(text, "b, d, g   {:.6e}, {:.6e}, {:.6e}", file.b, file.d, file.g)?;
    writeln!(text, "delta     {:.6e}, beta {:.6e}", file.timing.delta, file.timing.beta)?;
    writeln!(text, "wrote     {}", cert_path.display())?;
    Ok((Outcome { code: exit::OK, text }, cert_path))
}

pub fn cmd_simulate(path: &Path, cert: &Path, out: Option<&Path>, sample_step: Option<f64>) -> Result<(Outcome, RunReport)> {
    let (scenario, built) = load(path)?;
    let cert = CertificateFile::load(cert)?;
    let dir = output_dir(out, &scenario);
    let (_, report) = simulate_to_dir(&scenario, &built, &cert, &dir, sample_step)?;
    let mut text = String::new();
    writeln!(text, "events            {}", report.events)?;
    match (report.measured_decay_rate, &report.decay_note) {
        (Some(r), _) => writeln!(text, "decay rate        {r:.6}")?,
        (None, Some(note)) => writeln!(text, "decay rate        unavailable: {note}")?,
        (None, None) => {}
    }
    writeln!(
        text,
        "bound violations  {} of {} ({})",
        report.bound_violations,
        report.bound_checked_events,
        if report.bound_certified { "certified" } else { "not certified" }
    )?;
    for f in &report.files {
        writeln!(text, "wrote             {} ({} bytes)", dir.join(&f.name).display(), f.bytes)?;
    }
    let code = if report.bound_certified && report.bound_violations > 0 { exit::CHECK_FAILED } else { exit::OK };
    Ok((Outcome { code, text }, report))
}

pub fn cmd_verify(path: &Path) -> Result<(Outcome, VerifyReport)> {
    let (scenario, built) = load(path)?;
    let report = verify(&scenario, &built)?;
    let mut text = String::new();
    for c in &report.checks {
        writeln!(text, "{c}")?;
    }
    let code = if report.passed() { exit::OK } else { exit::CHECK_FAILED };
    writeln!(text, "{}", if code == exit::OK { "verify: pass" } else { "verify: FAIL" })?;
    Ok((Outcome { code, text }, report))
}

pub fn cmd_resilience(path: &Path, vbar: usize) -> Result<Outcome> {
    let (scenario, built) = load(path)?;
    let report =
        resilience_qstar(&built.plant, &built.decs, &built.schedule, vbar, built.rates, scenario.timing.period)?;
    let mut text = String::new();
    writeln!(text, "{:<14} {:>12} {:>12} {:>18} {:>10} {:>12}", "agents", "connected", "observable", "rho", "alpha-gap", "q")?;
    for row in &report.subsets {
        let names: Vec<String> = row.agents.iter().map(|a| (a + 1).to_string()).collect();
        writeln!(
            text,
            "{:<14} {:>12} {:>12} {:>18.12} {:>10.3e} {:>12}",
            format!("{{{}}}", names.join(",")),
            "yes",
            "yes",
            row.rho,
            1.0 - row.alpha,
            row.q
        )?;
    }
    writeln!(text, "q* = {} for vbar = {vbar}", report.q_star)?;
    Ok(Outcome { code: exit::OK, text })
}
