//! Design certificates: everything a simulation needs besides the scenario itself.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hybrid_observer::design::{certify, proof_constants, DesignRequest, ResilienceReport};
use hybrid_observer::{DesignCertificate, Mat, Mode, TimingConfig};

use crate::scenario::{from_mat, to_mat, Built, MatrixRows, QSpec, Scenario, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFile {
    pub period: f64,
    pub delta: f64,
    pub beta: f64,
    pub q: usize,
    pub epsilons: Vec<f64>,
    pub seed: u64,
    pub start_offsets: Vec<f64>,
}

impl From<&TimingFile> for TimingConfig {
    fn from(t: &TimingFile) -> Self {
        TimingConfig {
            period: t.period,
            delta: t.delta,
            beta: t.beta,
            q: t.q,
            epsilons: t.epsilons.clone(),
            seed: t.seed,
            start_offsets: t.start_offsets.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionFile {
    pub l: MatrixRows,
    pub abar: MatrixRows,
    pub cbar: MatrixRows,
    pub q: MatrixRows,
    pub p: MatrixRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    /// 1-based.
    pub agents: Vec<usize>,
    pub rho: f64,
    pub alpha: f64,
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResilienceFile {
    pub vbar: usize,
    pub subsets: Vec<SubsetRow>,
    pub q_star: usize,
}

impl From<&ResilienceReport> for ResilienceFile {
    fn from(r: &ResilienceReport) -> Self {
        ResilienceFile {
            vbar: r.vbar,
            subsets: r
                .subsets
                .iter()
                .map(|s| SubsetRow {
                    agents: s.agents.iter().map(|a| a + 1).collect(),
                    rho: s.rho,
                    alpha: s.alpha,
                    p: s.p,
                    q: s.q,
                })
                .collect(),
            q_star: r.q_star,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub lambda: f64,
    pub lambda_bar: f64,
    pub averaging: String,
    pub mode: String,
    pub rho: f64,
    /// False when ρ came from sampling rather than exhaustive enumeration.
    pub rho_certified: bool,
    pub alpha: f64,
    pub sigma: Option<f64>,
    pub p: usize,
    pub q_straight: usize,
    pub q_convex: Option<usize>,
    pub q_star: Option<ResilienceFile>,
    pub q: usize,
    pub q_certified: bool,
    pub gains: Vec<MatrixRows>,
    pub observer_constants: Vec<f64>,
    pub c: f64,
    pub a_norm: f64,
    pub q_norm: f64,
    pub b: f64,
    pub d: f64,
    pub g: f64,
    pub timing: TimingFile,
    pub decompositions: Vec<DecompositionFile>,
}

impl CertificateFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let c: CertificateFile =
            serde_json::from_str(&text).with_context(|| format!("parsing certificate {}", path.display()))?;
        if c.schema_version != SCHEMA_VERSION {
            bail!("unsupported certificate schema_version {}", c.schema_version);
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn gains(&self) -> Result<Vec<Mat>> {
        self.gains.iter().map(to_mat).collect()
    }

    pub fn timing(&self) -> TimingConfig {
        (&self.timing).into()
    }

    /// Refuses a certificate issued for a different scenario.
    pub fn check_matches(&self, scenario: &Scenario) -> Result<()> {
        let hash = scenario.hash();
        if hash != self.scenario_hash {
            bail!("certificate was issued for scenario {} but this scenario hashes to {hash}", self.scenario_hash);
        }
        Ok(())
    }
}

/// Fills in `Δ`, `β` and `ε_i` once `q` is known.
pub fn resolve_timing(scenario: &Scenario, mode: Mode, q: usize) -> Result<TimingConfig> {
    let m = scenario.agents();
    let t = &scenario.timing;
    if t.epsilons.is_some() && t.epsilon_fractions.is_some() {
        bail!("give either timing.epsilons or timing.epsilon_fractions, not both");
    }
    let check_len = |v: &Vec<f64>, what: &str| {
        if v.len() != m {
            bail!("timing.{what} has {} entries for {m} agents", v.len());
        }
        Ok(())
    };
    let max_abs = match &t.epsilons {
        Some(e) => {
            check_len(e, "epsilons")?;
            e.iter().copied().fold(0.0, f64::max)
        }
        None => 0.0,
    };
    let delta = t.delta.unwrap_or((t.period - max_abs) / (q as f64 + 1.0));
    let beta = t.beta.unwrap_or(delta / 2.0);
    let epsilons = match (&t.epsilons, &t.epsilon_fractions) {
        (Some(e), _) => e.clone(),
        (None, Some(f)) => {
            check_len(f, "epsilon_fractions")?;
            f.iter().map(|x| x * delta).collect()
        }
        (None, None) => vec![0.0; m],
    };
    let start_offsets = match &t.start_offsets {
        Some(o) => {
            check_len(o, "start_offsets")?;
            o.clone()
        }
        None => vec![0.0; m],
    };
    let timing = TimingConfig { period: t.period, delta, beta, q, epsilons, seed: t.seed, start_offsets };
    timing.validate(mode)?;
    Ok(timing)
}

/// Runs the design pipeline for a scenario.
pub fn design(scenario: &Scenario, built: &Built) -> Result<(DesignCertificate, TimingConfig)> {
    let fixed = match scenario.timing.q {
        QSpec::Fixed(q) => Some(q),
        QSpec::Auto(_) => None,
    };
    let req = DesignRequest {
        plant: &built.plant,
        decs: &built.decs,
        schedule: &built.schedule,
        rates: built.rates,
        period: scenario.timing.period,
        beta: 0.0,
        averaging: built.averaging,
        q: fixed,
        gain_overrides: &built.gain_overrides,
        vbar: scenario.resilience.vbar,
    };
    let mut cert = certify(&req)?;
    let timing = resolve_timing(scenario, built.mode, cert.q)?;
    // β enters g, and is only known after q.
    cert.beta = timing.beta;
    cert.constants = proof_constants(
        cert.q,
        built.plant.agents(),
        cert.c,
        cert.q_norm,
        cert.a_norm,
        cert.rates,
        cert.period,
        cert.beta,
    )?;
    Ok((cert, timing))
}

pub fn to_file(scenario: &Scenario, built: &Built, cert: &DesignCertificate, timing: &TimingConfig) -> CertificateFile {
    CertificateFile {
        schema_version: SCHEMA_VERSION,
        scenario_hash: scenario.hash(),
        lambda: cert.rates.lambda,
        lambda_bar: cert.rates.lambda_bar,
        averaging: cert.averaging.name().to_string(),
        mode: built.mode.name().to_string(),
        rho: cert.rho.value,
        rho_certified: cert.rho.certified,
        alpha: cert.alpha,
        sigma: cert.sigma,
        p: cert.p,
        q_straight: cert.q_straight,
        q_convex: cert.q_convex,
        q_star: cert.q_star.as_ref().map(ResilienceFile::from),
        q: cert.q,
        q_certified: cert.q_certified,
        gains: cert.gains.iter().map(from_mat).collect(),
        observer_constants: cert.obs_constants.clone(),
        c: cert.c,
        a_norm: cert.a_norm,
        q_norm: cert.q_norm,
        b: cert.constants.b,
        d: cert.constants.d,
        g: cert.constants.g,
        timing: TimingFile {
            period: timing.period,
            delta: timing.delta,
            beta: timing.beta,
            q: timing.q,
            epsilons: timing.epsilons.clone(),
            seed: timing.seed,
            start_offsets: timing.start_offsets.clone(),
        },
        decompositions: built
            .decs
            .iter()
            .map(|d| DecompositionFile {
                l: from_mat(&d.l),
                abar: from_mat(&d.abar),
                cbar: from_mat(&d.cbar),
                q: from_mat(&d.q),
                p: from_mat(&d.p),
            })
            .collect(),
    }
}
