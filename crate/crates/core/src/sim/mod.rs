//! Deterministic simulation of the hybrid observer.
//!
//! Continuous flows (plant, local observers, inter-event estimates) are
//! advanced exactly between discrete instants. The discrete instants (event
//! resets, latches, outages, samples) are merged into one ordered timeline.
//! At equal times a reset comes before an outage change, which comes before a
//! latch, then bookkeeping marks and samples; remaining ties go by agent index.

pub mod consensus;
pub mod flow;
pub mod measure;
pub mod oracle;

use crate::design::Averaging;
use crate::error::{Error, Result};
use crate::graph::{first_constancy_violation, GraphSchedule};
use crate::matrix::{mat_exp, Mat, Vector};
use crate::plant::{ChannelDecomposition, LtiPlant};
use crate::timing::{Mode, TimingConfig};

use consensus::{rows_for, EventRounds, Outages, RoundEngine};
use flow::JointFlow;

pub use consensus::{event_reset, iterate_once, mixing_matrix, mixing_row, source_set};
pub use flow::{propagate_local_observer, propagate_truth};
pub use measure::{event_error_norms, measure_decay, mismatch_bound, theorem_bound, ErrorNorm};
pub use oracle::{oracle_recursion, OracleInput, OracleStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResilienceKind {
    Lose,
    Gain,
}

/// An agent leaving or rejoining the network at `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResilienceEvent {
    pub time: f64,
    pub kind: ResilienceKind,
    /// 0-based agent index.
    pub agent: usize,
}

/// What a lost agent does until it rejoins.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LostAgent {
    /// Local observer and estimate both hold their values.
    #[default]
    Frozen,
    /// The local observer keeps integrating the agent's own measurements; the estimate holds.
    SensingOnly,
}

/// Everything a run needs.
#[derive(Debug, Clone)]
pub struct SimSetup<'a> {
    pub plant: &'a LtiPlant,
    pub decs: &'a [ChannelDecomposition],
    pub gains: &'a [Mat],
    pub schedule: &'a GraphSchedule,
    pub timing: &'a TimingConfig,
    pub mode: Mode,
    pub averaging: Averaging,
    pub events: &'a [ResilienceEvent],
    pub lost_agents: LostAgent,
    /// `w_i` at each agent's first event start.
    pub w0: &'a [Vector],
    /// `x_i` at each agent's first event start.
    pub xhat0: &'a [Vector],
    pub horizon: f64,
    /// Trace grid spacing; `None` records event instants only.
    pub sample_step: Option<f64>,
    /// Log `z_is(k)` for rounds `k ≤ log_rounds`.
    pub log_rounds: usize,
}

/// Joint state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vector,
    pub estimates: Vec<Vector>,
    /// Local observer states `w_i`.
    pub local: Vec<Vector>,
    pub active: Vec<bool>,
}

impl Sample {
    /// `e_i = x_i − x`, or `None` while agent `i` is inactive.
    pub fn error(&self, i: usize) -> Option<Vector> {
        self.active[i].then(|| &self.estimates[i] - &self.x)
    }
}

/// Errors at the `s`-th event time of every agent (`s = 0` is the initial instant).
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub s: usize,
    /// Nominal `sT`.
    pub time: f64,
    /// `t_is` per agent.
    pub agent_times: Vec<f64>,
    /// `e_i(t_is)`; `None` for agents that did not take part.
    pub errors: Vec<Option<Vector>>,
    /// `ē_i(t_is) = w_i − L_i x`.
    pub local_errors: Vec<Option<Vector>>,
    /// `x(sT)`.
    pub truth: Option<Vector>,
}

impl EventRecord {
    pub fn participants(&self) -> Vec<usize> {
        (0..self.errors.len()).filter(|&i| self.errors[i].is_some()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub s: usize,
    pub k: usize,
    pub z: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub mode: Mode,
    pub averaging: Averaging,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub period: f64,
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub iterates: Vec<IterateRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Reset { s: usize },
    Outage { idx: usize },
    Init,
    Latch { s: usize },
    Mark { s: usize },
    Sample,
}

#[derive(Debug, Clone, Copy)]
struct Instant {
    t: f64,
    kind: Kind,
    agent: usize,
}

impl Instant {
    fn priority(&self) -> u8 {
        match self.kind {
            Kind::Reset { .. } => 0,
            Kind::Outage { .. } => 1,
            Kind::Init => 2,
            Kind::Latch { .. } => 3,
            Kind::Mark { .. } => 4,
            Kind::Sample => 5,
        }
    }
}

fn build_outages(m: usize, events: &[ResilienceEvent]) -> Result<Outages> {
    let mut sorted: Vec<&ResilienceEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut out = Outages::none(m);
    let mut open: Vec<Option<f64>> = vec![None; m];
    for e in sorted {
        if e.agent >= m || !e.time.is_finite() {
            return Err(Error::Precondition(format!("bad resilience event for agent {} at t = {}", e.agent + 1, e.time)));
        }
        match (e.kind, open[e.agent]) {
            (ResilienceKind::Lose, None) => open[e.agent] = Some(e.time),
            (ResilienceKind::Gain, Some(t0)) => {
                out.intervals[e.agent].push((t0, e.time));
                open[e.agent] = None;
            }
            (ResilienceKind::Lose, Some(_)) => {
                return Err(Error::Precondition(format!("agent {} lost twice without rejoining", e.agent + 1)))
            }
            (ResilienceKind::Gain, None) => {
                return Err(Error::Precondition(format!("agent {} rejoins without having been lost", e.agent + 1)))
            }
        }
    }
    for (i, t0) in open.into_iter().enumerate() {
        if let Some(t0) = t0 {
            out.intervals[i].push((t0, f64::INFINITY));
        }
    }
    Ok(out)
}

/// Checks the preconditions of a run in the given mode.
pub fn validate_setup(setup: &SimSetup) -> Result<()> {
    let m = setup.plant.agents();
    let n = setup.plant.n();
    if setup.decs.len() != m || setup.gains.len() != m || setup.w0.len() != m || setup.xhat0.len() != m {
        return Err(Error::Dimension(format!("per-agent data must have {m} entries")));
    }
    for (i, d) in setup.decs.iter().enumerate() {
        if setup.w0[i].len() != d.observable_dim() || setup.xhat0[i].len() != n {
            return Err(Error::Dimension(format!("initial state of agent {} has the wrong size", i + 1)));
        }
    }
    if m > 63 {
        return Err(Error::Precondition("at most 63 agents".into()));
    }
    if setup.timing.agents() != m || setup.schedule.vertex_count() != m {
        return Err(Error::Dimension(format!("timing and schedule must describe {m} agents")));
    }
    setup.timing.validate(setup.mode)?;
    if !(setup.horizon > 0.0 && setup.horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon {} must be positive", setup.horizon)));
    }
    if let Some(dt) = setup.sample_step {
        if !(dt > 0.0) {
            return Err(Error::Precondition(format!("sample step {dt} must be positive")));
        }
    }
    if setup.averaging == Averaging::Convex && !setup.schedule.graphs().all(|g| g.is_symmetric()) {
        return Err(Error::Precondition("convex averaging needs every scheduled graph to be symmetric".into()));
    }
    if setup.mode == Mode::Async {
        if let Some((t, s, k)) = first_constancy_violation(setup.schedule, setup.timing) {
            return Err(Error::ConstancyViolated(format!("graph switches at t = {t} inside I_{s}({k})")));
        }
    }
    Ok(())
}

/// Number of complete event intervals every agent finishes within the horizon.
pub fn event_count(timing: &TimingConfig, mode: Mode, horizon: f64) -> usize {
    let last_start = (0..timing.agents()).map(|i| timing.event_start(mode, i, 1)).fold(0.0, f64::max);
    ((horizon - last_start) / timing.period + 1e-9).floor().max(0.0) as usize
}

/// Runs the hybrid observer and records its trace.
pub fn run_simulation(setup: &SimSetup) -> Result<SimTrace> {
    validate_setup(setup)?;
    let plant = setup.plant;
    let timing = setup.timing;
    let mode = setup.mode;
    let (m, n) = (plant.agents(), plant.n());
    let outages = build_outages(m, setup.events)?;
    let events_total = event_count(timing, mode, setup.horizon);
    let starts: Vec<f64> = (0..m).map(|i| timing.event_start(mode, i, 1)).collect();
    let t_begin = starts.iter().copied().fold(0.0, f64::min);

    let mut instants = Vec::new();
    for (i, &start) in starts.iter().enumerate() {
        instants.push(Instant { t: start, kind: Kind::Init, agent: i });
        for s in 1..=events_total {
            instants.push(Instant { t: timing.event_start(mode, i, s), kind: Kind::Latch { s }, agent: i });
            instants.push(Instant { t: timing.event_start(mode, i, s + 1), kind: Kind::Reset { s }, agent: i });
        }
    }
    for (idx, e) in setup.events.iter().enumerate() {
        if e.time >= t_begin && e.time <= setup.horizon {
            instants.push(Instant { t: e.time, kind: Kind::Outage { idx }, agent: e.agent });
        }
    }
    for s in 0..=events_total {
        let t = s as f64 * timing.period;
        if t <= setup.horizon {
            instants.push(Instant { t, kind: Kind::Mark { s }, agent: 0 });
        }
    }
    if let Some(dt) = setup.sample_step {
        let first = (t_begin / dt).ceil() as i64;
        let last = (setup.horizon / dt + 1e-9).floor() as i64;
        for k in first..=last {
            instants.push(Instant { t: (k as f64 * dt).min(setup.horizon), kind: Kind::Sample, agent: 0 });
        }
        if (last as f64) * dt < setup.horizon {
            instants.push(Instant { t: setup.horizon, kind: Kind::Sample, agent: 0 });
        }
    }
    if let Some(nf) = plant.noise() {
        for &(t, _) in &nf.offsets {
            if t > t_begin && t < setup.horizon {
                // A bare mark forces a step boundary at the forcing jump.
                instants.push(Instant { t, kind: Kind::Mark { s: usize::MAX }, agent: 0 });
            }
        }
    }
    instants.sort_by(|a, b| {
        a.t.total_cmp(&b.t).then(a.priority().cmp(&b.priority())).then(a.agent.cmp(&b.agent)).then(a.kind.cmp(&b.kind))
    });

    let mut flow = JointFlow::new(plant, setup.decs, setup.gains);
    let mut state = Vector::zeros(flow.dim());
    flow.set_x(&mut state, &propagate_truth(plant, 0.0, t_begin, plant.x0())?);
    let mut t_now = t_begin;
    let mut initialized = 0u64;
    let mut lost = 0u64;
    let exp_at = mat_exp(plant.a(), timing.period)?;

    let mut records: Vec<EventRecord> = (0..=events_total)
        .map(|s| EventRecord {
            s,
            time: s as f64 * timing.period,
            agent_times: (0..m).map(|i| timing.event_start(mode, i, s + 1)).collect(),
            errors: vec![None; m],
            local_errors: vec![None; m],
            truth: None,
        })
        .collect();
    let mut participants = vec![0u64; events_total + 2];
    let mut latched_w: Vec<Vec<Vec<f64>>> = vec![Vec::new(); events_total + 2];
    let mut latched_z: Vec<Vec<Vector>> = vec![Vec::new(); events_total + 2];
    let mut finals: Vec<Option<Vec<Vector>>> = vec![None; events_total + 2];
    let mut engine = RoundEngine::new(setup.decs, n);
    let mut samples = Vec::new();
    let mut iterates = Vec::new();

    let local_error = |flow: &JointFlow, state: &Vector, i: usize| flow.w(state, i) - &setup.decs[i].l * flow.x(state);

    for inst in instants {
        if inst.t > t_now {
            let observers = match setup.lost_agents {
                LostAgent::Frozen => initialized & !lost,
                LostAgent::SensingOnly => initialized,
            };
            flow.advance(&mut state, t_now, inst.t - t_now, observers, initialized & !lost)?;
            t_now = inst.t;
        } else {
            flow.sync_forcing(&mut state, t_now);
        }
        let i = inst.agent;
        let active = |mask_init: u64, mask_lost: u64| mask_init & !mask_lost & (1 << i) != 0;
        match inst.kind {
            Kind::Init => {
                flow.set_w(&mut state, i, &setup.w0[i]);
                flow.set_xhat(&mut state, i, &setup.xhat0[i]);
                initialized |= 1 << i;
            }
            Kind::Outage { idx } => match setup.events[idx].kind {
                ResilienceKind::Lose => lost |= 1 << i,
                ResilienceKind::Gain => lost &= !(1 << i),
            },
            Kind::Latch { s } => {
                if !active(initialized, lost) {
                    continue;
                }
                if latched_w[s].is_empty() {
                    latched_w[s] = setup.decs.iter().map(|d| vec![0.0; d.observable_dim()]).collect();
                    latched_z[s] = vec![Vector::zeros(n); m];
                }
                participants[s] |= 1 << i;
                latched_w[s][i] = flow.w(&state, i).as_slice().to_vec();
                latched_z[s][i] = flow.xhat(&state, i);
                if s == 1 {
                    records[0].errors[i] = Some(flow.xhat(&state, i) - flow.x(&state));
                    records[0].local_errors[i] = Some(local_error(&flow, &state, i));
                }
            }
            Kind::Reset { s } => {
                if participants[s] & (1 << i) == 0 || !active(initialized, lost) {
                    continue;
                }
                if finals[s].is_none() {
                    let ctx = EventRounds {
                        sched: setup.schedule,
                        timing,
                        mode,
                        s,
                        participants: participants[s],
                        outages: &outages,
                    };
                    engine.load(&latched_z[s]);
                    for run in ctx.runs() {
                        let rows = rows_for(setup.averaging, &run.masks);
                        let logged = setup.log_rounds.saturating_sub(run.start - 1).min(run.len());
                        for k in run.start..run.start + logged {
                            engine.run(&rows, &latched_w[s], participants[s], 1);
                            iterates.push(IterateRecord { s, k, z: (0..m).map(|j| engine.agent(j)).collect() });
                        }
                        engine.run(&rows, &latched_w[s], participants[s], run.len() - logged);
                    }
                    finals[s] = Some((0..m).map(|j| engine.agent(j)).collect());
                    latched_w[s] = Vec::new();
                }
                let z_q = &finals[s].as_ref().expect("computed above")[i];
                flow.set_xhat(&mut state, i, &(&exp_at * z_q));
                records[s].errors[i] = Some(flow.xhat(&state, i) - flow.x(&state));
                records[s].local_errors[i] = Some(local_error(&flow, &state, i));
            }
            Kind::Mark { s } => {
                if s != usize::MAX {
                    records[s].truth = Some(flow.x(&state));
                }
            }
            Kind::Sample => {
                let mask = initialized & !lost;
                samples.push(Sample {
                    t: t_now,
                    x: flow.x(&state),
                    estimates: (0..m).map(|j| flow.xhat(&state, j)).collect(),
                    local: (0..m).map(|j| flow.w(&state, j)).collect(),
                    active: (0..m).map(|j| mask & (1 << j) != 0).collect(),
                });
            }
        }
    }

    Ok(SimTrace {
        mode,
        averaging: setup.averaging,
        n,
        m,
        q: timing.q,
        period: timing.period,
        samples,
        events: records,
        iterates,
    })
}
