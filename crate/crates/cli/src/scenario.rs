//! Scenario files: JSON descriptions of a plant, its agents, the network and a run.
//!
//! Agents and arc endpoints are 1-based in the file and 0-based in memory.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hybrid_observer::design::{Averaging, RateSpec};
use hybrid_observer::plant::decompose_all;
use hybrid_observer::{
    ChannelDecomposition, DiGraph, GraphSchedule, LostAgent, LtiPlant, Mat, Mode, NoiseForcing, ResilienceEvent, ResilienceKind,
    Vector,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Row-major nested arrays.
pub type MatrixRows = Vec<Vec<f64>>;

pub fn to_mat(rows: &MatrixRows) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        bail!("matrix must be a non-empty rectangular array of rows");
    }
    Ok(Mat::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

pub fn from_mat(m: &Mat) -> MatrixRows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub plant: PlantSpec,
    #[serde(default)]
    pub overrides: Overrides,
    pub rates: Rates,
    pub timing: TimingSpec,
    /// Named arc lists; self-arcs are implicit.
    pub graphs: BTreeMap<String, Vec<(usize, usize)>>,
    pub schedule: ScheduleSpec,
    pub mode: ModeSpec,
    #[serde(default)]
    pub averaging: AveragingSpec,
    pub horizon: f64,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub resilience: ResilienceSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: MatrixRows,
    /// One `C_i` per agent.
    pub channels: Vec<MatrixRows>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

/// `b·(amplitude·cos(omega·t) + offset(t))` added to `ẋ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub b: Vec<f64>,
    pub amplitude: f64,
    pub omega: f64,
    /// `(t, value)` pairs; the offset jumps to `value` at `t`.
    #[serde(default)]
    pub offsets: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Optional `L_i` per agent (`null` keeps the computed basis).
    #[serde(default)]
    pub l: Vec<Option<MatrixRows>>,
    /// Optional `K_i` per agent (`null` designs one).
    #[serde(default)]
    pub k: Vec<Option<MatrixRows>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub lambda: f64,
    pub lambda_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QSpec {
    Fixed(usize),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for QSpec {
    fn default() -> Self {
        QSpec::Auto(AutoTag::Auto)
    }
}

/// Timing. Unset `delta` defaults to `(T − max ε)/(q+1)`, unset `beta` to `Δ/2`.
/// Deviation bounds are given either absolutely (`epsilons`) or as fractions of `Δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    pub period: f64,
    #[serde(default)]
    pub q: QSpec,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub epsilon_fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub start_offsets: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Cycle through `graphs`, each held for `dwell` time units, starting at 0.
    Alternate { graphs: Vec<String>, dwell: f64 },
    /// Explicit `(start, graph)` segments; the first must start at or before 0.
    Segments(Vec<(f64, String)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    Sync,
    Async,
    Mismatch,
}

impl From<ModeSpec> for Mode {
    fn from(m: ModeSpec) -> Mode {
        match m {
            ModeSpec::Sync => Mode::Sync,
            ModeSpec::Async => Mode::Async,
            ModeSpec::Mismatch => Mode::Mismatch,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AveragingSpec {
    #[default]
    Straight,
    Convex,
}

impl From<AveragingSpec> for Averaging {
    fn from(a: AveragingSpec) -> Averaging {
        match a {
            AveragingSpec::Straight => Averaging::Straight,
            AveragingSpec::Convex => Averaging::Convex,
        }
    }
}

/// Missing entries start at zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub w: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub xhat: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResilienceSpec {
    /// Vertex losses the design must tolerate.
    #[serde(default)]
    pub vbar: usize,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub lost_agents: LostAgentSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LostAgentSpec {
    #[default]
    Frozen,
    SensingOnly,
}

impl From<LostAgentSpec> for LostAgent {
    fn from(l: LostAgentSpec) -> LostAgent {
        match l {
            LostAgentSpec::Frozen => LostAgent::Frozen,
            LostAgentSpec::SensingOnly => LostAgent::SensingOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKindSpec {
    Lose,
    Gain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time: f64,
    pub kind: EventKindSpec,
    pub agent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_sample_step")]
    pub sample_step: f64,
}

fn default_sample_step() -> f64 {
    0.01
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: None, sample_step: default_sample_step() }
    }
}

/// A scenario turned into library objects.
#[derive(Debug, Clone)]
pub struct Built {
    pub plant: LtiPlant,
    pub decs: Vec<ChannelDecomposition>,
    pub gain_overrides: Vec<Option<Mat>>,
    pub schedule: GraphSchedule,
    pub rates: RateSpec,
    pub mode: Mode,
    pub averaging: Averaging,
    pub w0: Vec<Vector>,
    pub xhat0: Vec<Vector>,
    pub events: Vec<ResilienceEvent>,
    pub lost_agents: LostAgent,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        if s.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", s.schema_version);
        }
        Ok(s)
    }

    /// SHA-256 of the canonical serialization, so formatting changes do not alter it.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&serde_json::to_value(self).expect("scenario serializes"))
            .expect("value serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn agents(&self) -> usize {
        self.plant.channels.len()
    }

    /// Cross-checks the scenario and builds the plant, decompositions and schedule.
    pub fn build(&self) -> Result<Built> {
        let m = self.agents();
        let a = to_mat(&self.plant.a).context("plant.a")?;
        let channels = self
            .plant
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| to_mat(c).with_context(|| format!("plant.channels[{}]", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let noise = self.plant.noise.as_ref().map(|nf| {
            let mut f = NoiseForcing::cosine(Vector::from_vec(nf.b.clone()), nf.amplitude, nf.omega);
            f.offsets = nf.offsets.clone();
            f
        });
        let plant = LtiPlant::new(a, channels, Vector::from_vec(self.plant.x0.clone()), noise)?;

        let l_over = per_agent(&self.overrides.l, m, "overrides.l")?;
        let k_over = per_agent(&self.overrides.k, m, "overrides.k")?;
        let decs = decompose_all(&plant, &l_over)?;
        let rates = RateSpec::new(self.rates.lambda, self.rates.lambda_bar)?;

        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bail!("horizon must be positive");
        }
        let schedule = self.build_schedule(m)?;

        let w0 = match &self.initial.w {
            Some(w) => vectors(w, m, "initial.w")?,
            None => decs.iter().map(|d| Vector::zeros(d.observable_dim())).collect(),
        };
        let xhat0 = match &self.initial.xhat {
            Some(x) => vectors(x, m, "initial.xhat")?,
            None => vec![Vector::zeros(plant.n()); m],
        };
        let events = self
            .resilience
            .events
            .iter()
            .map(|e| {
                if e.agent == 0 || e.agent > m {
                    bail!("resilience event names agent {} of {m}", e.agent);
                }
                let kind = match e.kind {
                    EventKindSpec::Lose => ResilienceKind::Lose,
                    EventKindSpec::Gain => ResilienceKind::Gain,
                };
                Ok(ResilienceEvent { time: e.time, kind, agent: e.agent - 1 })
            })
            .collect::<Result<Vec<_>>>()?;
        let lost = events.iter().filter(|e| e.kind == ResilienceKind::Lose).map(|e| e.agent).collect::<Vec<_>>();
        if lost.len() > self.resilience.vbar {
            bail!(
                "resilience events remove {} agents but the design tolerates vbar = {}",
                lost.len(),
                self.resilience.vbar
            );
        }

        Ok(Built {
            plant,
            decs,
            gain_overrides: k_over,
            schedule,
            rates,
            mode: self.mode.into(),
            averaging: self.averaging.into(),
            w0,
            xhat0,
            events,
            lost_agents: self.resilience.lost_agents.into(),
        })
    }

    fn build_schedule(&self, m: usize) -> Result<GraphSchedule> {
        let mut graphs = BTreeMap::new();
        for (name, arcs) in &self.graphs {
            let mut zero = Vec::with_capacity(arcs.len());
            for &(from, to) in arcs {
                if from == 0 || to == 0 || from > m || to > m {
                    bail!("graph {name:?} has arc ({from}, {to}) outside 1..={m}");
                }
                zero.push((from - 1, to - 1));
            }
            graphs.insert(name.clone(), DiGraph::from_arcs(m, &zero)?);
        }
        let lookup = |name: &String| {
            graphs.get(name).cloned().with_context(|| format!("schedule names unknown graph {name:?}"))
        };
        // Mismatched clocks and late broadcasts read the schedule slightly past the horizon.
        let horizon = self.horizon + 2.0 * self.timing.period;
        Ok(match &self.schedule {
            ScheduleSpec::Alternate { graphs: names, dwell } => {
                let gs = names.iter().map(lookup).collect::<Result<Vec<_>>>()?;
                GraphSchedule::alternating(&gs, *dwell, horizon)?
            }
            ScheduleSpec::Segments(segs) => {
                let segments = segs.iter().map(|(t, name)| Ok((*t, lookup(name)?))).collect::<Result<Vec<_>>>()?;
                GraphSchedule::new(segments, horizon)?
            }
        })
    }
}

fn per_agent(list: &[Option<MatrixRows>], m: usize, what: &str) -> Result<Vec<Option<Mat>>> {
    if !list.is_empty() && list.len() != m {
        bail!("{what} has {} entries for {m} agents", list.len());
    }
    let mut out = vec![None; m];
    for (i, e) in list.iter().enumerate() {
        if let Some(rows) = e {
            out[i] = Some(to_mat(rows).with_context(|| format!("{what}[{}]", i + 1))?);
        }
    }
    Ok(out)
}

fn vectors(v: &[Vec<f64>], m: usize, what: &str) -> Result<Vec<Vector>> {
    if v.len() != m {
        bail!("{what} has {} entries for {m} agents", v.len());
    }
    Ok(v.iter().map(|x| Vector::from_vec(x.clone())).collect())
}
