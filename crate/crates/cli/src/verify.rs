//! The check battery behind `verify`: design checks, timing lemmas, the
//! simulator against the error recursion, and the explicit bounds.

use std::fmt;

use anyhow::Result;

use hybrid_observer::design::{spectral_abscissa, validate_gain};
use hybrid_observer::graph::neighbors;
use hybrid_observer::matrix::{mixed_norm_partitioned, Vector};
use hybrid_observer::sim::{measure_decay, source_set};
use hybrid_observer::{Mode, TimingConfig};

use crate::certificate::{design, to_file, CertificateFile};
use crate::run::{count_violations, decay_points, execute, Run, TAIL_FRACTION};
use crate::scenario::{Built, Scenario};

/// Relative tolerance of the oracle comparison, with an absolute floor.
pub const ORACLE_REL_TOL: f64 = 1e-8;
pub const ORACLE_ABS_FLOOR: f64 = 1e-12;
/// Allowed shortfall of the measured rate below λ.
pub const RATE_SLACK: f64 = 0.1;
/// Rounds at each end of an event that the timing checks visit.
const ROUND_SAMPLE: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// The check does not apply to an uncertified design; the detail says what was observed.
    NotCertified,
    /// Behaviour the theory predicts for this configuration, such as growth of an unstable plant.
    Expected,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotCertified => "NOT-CERTIFIED",
            Status::Expected => "EXPECTED",
            Status::Skipped => "SKIP",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<14} {:<22} {}", self.status, self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub certificate: CertificateFile,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &'static str, ok: bool, detail: String) -> Check {
    Check { name, status: if ok { Status::Pass } else { Status::Fail }, detail }
}

fn rounds(q: usize) -> impl Iterator<Item = usize> {
    let head = 1..=q.min(ROUND_SAMPLE);
    let tail = (q.saturating_sub(ROUND_SAMPLE) + 1).max(q.min(ROUND_SAMPLE) + 1)..=q;
    head.chain(tail)
}

/// Every broadcast for round `k` lands in each receiver's reception interval `[τ_i(k−1), τ_i(k))`.
fn reception_check(timing: &TimingConfig, mode: Mode, events: usize) -> Check {
    if mode == Mode::Mismatch {
        return Check { name: "reception-intervals", status: Status::Skipped, detail: "rounds are index-matched across offset clocks".into() };
    }
    let m = timing.agents();
    let mut tested = 0usize;
    for s in 1..=events.clamp(1, 3) {
        for k in rounds(timing.q) {
            for j in 0..m {
                let b = timing.broadcast_time(mode, j, s, k);
                for i in 0..m {
                    let lo = timing.iteration_time(mode, i, s, k - 1);
                    let hi = timing.iteration_time(mode, i, s, k);
                    tested += 1;
                    if !(lo <= b && b < hi) {
                        return check(
                            "reception-intervals",
                            false,
                            format!("agent {} broadcast at {b} misses agent {} interval [{lo}, {hi}) (s={s}, k={k})", j + 1, i + 1),
                        );
                    }
                }
            }
        }
    }
    check("reception-intervals", true, format!("{tested} broadcast/receiver pairs"))
}

/// Source sets equal the neighbor sets at the nominal broadcast instant.
fn source_set_check(built: &Built, timing: &TimingConfig, events: usize) -> Check {
    if built.mode == Mode::Mismatch {
        return Check { name: "source-sets", status: Status::Skipped, detail: "offset clocks read the graph at different instants".into() };
    }
    let m = timing.agents();
    let mut tested = 0usize;
    for s in 1..=events.max(1) {
        for k in rounds(timing.q).step_by(97).chain([1, timing.q]) {
            let t = (s as f64 - 1.0) * timing.period + (k as f64 - 1.0) * timing.delta + timing.beta;
            let g = built.schedule.graph_at_clamped(t);
            for i in 0..m {
                tested += 1;
                let got = source_set(&built.schedule, timing, built.mode, i, s, k);
                if got != neighbors(g, i) {
                    return check("source-sets", false, format!("agent {} at s={s}, k={k}: {got:?}", i + 1));
                }
            }
        }
    }
    check("source-sets", true, format!("{tested} (agent, round) pairs"))
}

fn oracle_checks(built: &Built, cert: &CertificateFile, run: &Run, out: &mut Vec<Check>) {
    let noisy = built.plant.noise().is_some();
    let outages = !built.events.is_empty();
    let Some(steps) = run.oracle.as_deref() else {
        return;
    };
    let certified = cert.q_certified;
    let (n, m) = (run.trace.n, run.trace.m);
    let rows = vec![n; m];
    let w_sizes: Vec<usize> = built.decs.iter().map(|d| d.observable_dim()).collect();

    if noisy || outages {
        let why = if noisy { "forcing noise is outside the recursion" } else { "outages change the agent set" };
        out.push(Check { name: "oracle-equivalence", status: Status::Skipped, detail: why.into() });
    } else {
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        for st in steps {
            let rec = &run.trace.events[st.s];
            let sim: Vec<f64> = rec.errors.iter().flat_map(|e| e.as_ref().expect("all agents take part").iter().copied()).collect();
            let diff = (Vector::from_vec(sim) - &st.error).norm();
            let scale = st.error.norm();
            worst = worst.max(diff / scale.max(ORACLE_ABS_FLOOR / ORACLE_REL_TOL));
            if diff > ORACLE_REL_TOL * scale + ORACLE_ABS_FLOOR {
                failures += 1;
            }
        }
        out.push(check(
            "oracle-equivalence",
            failures == 0,
            format!("{} events, {failures} mismatches, worst relative difference {worst:.2e}", steps.len()),
        ));
    }

    let limit_a = (-cert.lambda * cert.timing.period).exp();
    let (mut worst_a, mut worst_b, mut worst_g): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for st in steps {
        worst_a = worst_a.max(mixed_norm_partitioned(&st.a, &rows, &rows));
        worst_b = worst_b.max(mixed_norm_partitioned(&st.b, &rows, &w_sizes));
        worst_g = worst_g.max(mixed_norm_partitioned(&st.g, &rows, &[n]));
    }
    let holds = worst_a <= limit_a && worst_b <= cert.b;
    let detail = format!("max |A(s)| = {worst_a:.3e} (limit {limit_a:.3e}), max |B(s)| = {worst_b:.3e} (limit {:.3e})", cert.b);
    out.push(if certified {
        check("recursion-norms", holds, detail)
    } else {
        Check { name: "recursion-norms", status: Status::NotCertified, detail: format!("{detail}; {}", if holds { "holds" } else { "exceeded" }) }
    });

    if built.mode == Mode::Mismatch {
        let eps = cert.timing.epsilons.iter().copied().fold(0.0, f64::max);
        let limit = eps * cert.g;
        out.push(check("mismatch-forcing", worst_g <= limit, format!("max |G(s)| = {worst_g:.3e} (limit {limit:.3e})")));
    }
}

fn bound_checks(built: &Built, cert: &CertificateFile, run: &Run, out: &mut Vec<Check>) {
    let noisy = built.plant.noise().is_some();
    let (violations, checked) = count_violations(&run.rows);
    let detail = format!("{violations} violations over {checked} events");
    out.push(if noisy {
        Check { name: "error-bound", status: Status::Skipped, detail: format!("forcing noise is outside the bound; {detail}") }
    } else if !cert.q_certified {
        Check { name: "error-bound", status: Status::NotCertified, detail: format!("q = {} is below the certified count; {detail}", cert.q) }
    } else {
        check("error-bound", violations == 0, detail)
    });

    let rate = measure_decay(&decay_points(&run.rows), TAIL_FRACTION);
    let unstable = spectral_abscissa(built.plant.a()) > 0.0;
    let c = match (built.mode, rate) {
        (_, Err(e)) => Check { name: "decay-rate", status: Status::Skipped, detail: e.to_string() },
        (Mode::Mismatch, Ok(r)) if unstable => Check {
            name: "decay-rate",
            status: if r < 0.0 { Status::Expected } else { Status::Fail },
            detail: format!("rate {r:.3}; offset clocks on an unstable plant {}", if r < 0.0 { "grow, as predicted" } else { "did not grow" }),
        },
        (Mode::Mismatch, Ok(r)) => Check {
            name: "decay-rate",
            status: Status::Pass,
            detail: format!("rate {r:.3}; offset clocks on a stable plant only need bounded errors"),
        },
        (_, Ok(r)) if noisy => Check { name: "decay-rate", status: Status::Skipped, detail: format!("rate {r:.3} under forcing noise") },
        (_, Ok(r)) => {
            let want = cert.lambda - RATE_SLACK;
            let ok = r >= want;
            if cert.q_certified {
                check("decay-rate", ok, format!("rate {r:.3} (need {want:.3})"))
            } else {
                Check { name: "decay-rate", status: Status::NotCertified, detail: format!("rate {r:.3} (certified runs need {want:.3})") }
            }
        }
    };
    out.push(c);
}

/// Designs, simulates and checks a scenario.
pub fn verify(scenario: &Scenario, built: &Built) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let (cert, timing) = design(scenario, built)?;
    let file = to_file(scenario, built, &cert, &timing);

    let mut gains_ok = true;
    for (i, (dec, k)) in built.decs.iter().zip(&cert.gains).enumerate() {
        if let Err(e) = validate_gain(dec, k, built.rates) {
            gains_ok = false;
            checks.push(check("observer-gains", false, format!("agent {}: {e}", i + 1)));
        }
    }
    if gains_ok {
        checks.push(check("observer-gains", true, format!("{} gains reach rate {}", cert.gains.len(), built.rates.lambda_bar)));
    }
    checks.push(check(
        "attenuation",
        cert.alpha < 1.0,
        format!("rho = {:.6}{}, alpha = {:.10}", cert.rho.value, if cert.rho.certified { "" } else { " (sampled)" }, cert.alpha),
    ));
    let bound = if built.averaging == hybrid_observer::Averaging::Convex {
        cert.q_convex.unwrap_or(usize::MAX)
    } else {
        cert.q_star.as_ref().map_or(cert.q_straight, |r| r.q_star)
    };
    checks.push(Check {
        name: "iteration-count",
        status: if cert.q_certified { Status::Pass } else { Status::NotCertified },
        detail: format!("q = {} against certified {bound}", cert.q),
    });

    let events = hybrid_observer::sim::event_count(&timing, built.mode, scenario.horizon);
    checks.push(reception_check(&timing, built.mode, events));
    checks.push(source_set_check(built, &timing, events));

    let run = execute(scenario, built, &file, None)?;
    oracle_checks(built, &file, &run, &mut checks);
    bound_checks(built, &file, &run, &mut checks);
    Ok(VerifyReport { certificate: file, checks })
}
