//! Offline synthesis: local observer gains, the contraction constants ρ, α
//! and σ, iteration counts, proof constants and the resilience count q*.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{is_strongly_connected, metropolis_style_matrix, symmetric_connected_graphs, GraphSchedule};
use crate::matrix::{block_diag, kron_identity_dense, mat_exp, rank, spectral_norm, Mat};
use crate::plant::{check_joint_observability, observability_matrix, ChannelDecomposition, LtiPlant};

/// Target error decay `λ` and local observer rate `λ̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSpec {
    pub lambda: f64,
    pub lambda_bar: f64,
}

impl RateSpec {
    pub fn new(lambda: f64, lambda_bar: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda_bar > lambda && lambda_bar.is_finite()) {
            return Err(Error::Precondition(format!("rates need λ̄ > λ > 0, got λ = {lambda}, λ̄ = {lambda_bar}")));
        }
        Ok(Self { lambda, lambda_bar })
    }
}

/// Consensus rule used inside each event interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Averaging {
    /// Equal weights over the source set (flocking matrices).
    Straight,
    /// `z̄ = (1 − m_is/(m+1)) z_i + (1/(m+1)) Σ z_j`; needs symmetric graphs.
    Convex,
}

impl Averaging {
    pub fn name(self) -> &'static str {
        match self {
            Averaging::Straight => "straight",
            Averaging::Convex => "convex",
        }
    }
}

/// Spacing between the designed closed-loop poles.
const POLE_SPACING: f64 = 0.5;
/// Grid step for the `c_i` estimate.
const C_GRID_STEP: f64 = 1e-3;
const C_SAFETY: f64 = 1.05;
const EIG_TOL: f64 = 1e-8;
const GAIN_ATTEMPTS: usize = 10;

/// Coefficients of `Π (s − r_k)`, highest power first.
fn poly_from_roots(roots: &[f64]) -> Vec<f64> {
    let mut c = vec![1.0];
    for r in roots {
        let mut next = vec![0.0; c.len() + 1];
        for (k, ck) in c.iter().enumerate() {
            next[k] += ck;
            next[k + 1] -= ck * r;
        }
        c = next;
    }
    c
}

/// Observer form of Ackermann's formula: `K` such that `A + K c` has the given poles.
fn ackermann_observer(a: &Mat, c: &Mat, poles: &[f64]) -> Option<Mat> {
    let n = a.nrows();
    let obs = observability_matrix(c, a).ok()?;
    let obs_inv = obs.try_inverse()?;
    let coeffs = poly_from_roots(poles);
    let mut phi = Mat::zeros(n, n);
    for ck in &coeffs {
        phi = &phi * a + Mat::identity(n, n) * *ck;
    }
    let mut e_n = Mat::zeros(n, 1);
    e_n[(n - 1, 0)] = 1.0;
    Some(-(phi * obs_inv * e_n))
}

/// Largest real part among the eigenvalues of `m`.
pub fn spectral_abscissa(m: &Mat) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn check_rate(closed: &Mat, lambda_bar: f64, agent: usize) -> Result<()> {
    let abscissa = spectral_abscissa(closed);
    if abscissa > -lambda_bar + EIG_TOL {
        return Err(Error::Certificate(format!(
            "local observer {} has an eigenvalue with real part {abscissa:.6} > −λ̄ = {:.6}",
            agent + 1,
            -lambda_bar
        )));
    }
    Ok(())
}

/// `sup_t ||e^{Ft}|| e^{λ̄t}` estimated on a grid, times a safety factor.
///
/// The grid runs at the fine step over `[0, 10/λ̄]` and continues at a coarser
/// step for another 80 time units, long enough for the slowest transient
/// (set by the pole spacing) to settle.
pub fn observer_constant(closed: &Mat, lambda_bar: f64) -> Result<f64> {
    let n = closed.nrows();
    let shifted = closed + Mat::identity(n, n) * lambda_bar;
    let mut best: f64 = 1.0;
    let mut walk = |step: f64, steps: usize, start: Mat| -> Result<Mat> {
        let g = mat_exp(&shifted, step)?;
        let mut e = start;
        for _ in 0..steps {
            e = &g * &e;
            if e.norm() > best {
                best = best.max(spectral_norm(&e));
            }
        }
        Ok(e)
    };
    let fine = (10.0 / lambda_bar / C_GRID_STEP).ceil() as usize;
    let e = walk(C_GRID_STEP, fine, Mat::identity(n, n))?;
    walk(10.0 * C_GRID_STEP, (80.0 / (10.0 * C_GRID_STEP)) as usize, e)?;
    Ok(C_SAFETY * best)
}

/// Designs `K_i` with poles at `−λ̄ − 0.5k` and returns it with `c_i`.
pub fn design_gain(dec: &ChannelDecomposition, spec: RateSpec) -> Result<(Mat, f64)> {
    let (abar, cbar) = (&dec.abar, &dec.cbar);
    let ni = abar.nrows();
    let poles: Vec<f64> = (0..ni).map(|k| -spec.lambda_bar - POLE_SPACING * k as f64).collect();
    let k = if cbar.nrows() == 1 {
        ackermann_observer(abar, cbar, &poles)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + dec.agent as u64);
        (0..GAIN_ATTEMPTS).find_map(|_| {
            let v = Mat::from_fn(1, cbar.nrows(), |_, _| rng.gen_range(-1.0..1.0));
            let c = &v * cbar;
            if rank(&observability_matrix(&c, abar).ok()?) < ni {
                return None;
            }
            ackermann_observer(abar, &c, &poles).map(|k1| k1 * v)
        })
    }
    .ok_or_else(|| Error::Internal(format!("pole placement failed for agent {}", dec.agent + 1)))?;
    let closed = abar + &k * cbar;
    check_rate(&closed, spec.lambda_bar, dec.agent)?;
    Ok((k, observer_constant(&closed, spec.lambda_bar)?))
}

/// Accepts a user-supplied gain if it achieves rate `λ̄`; returns it with `c_i`.
pub fn validate_gain(dec: &ChannelDecomposition, k: &Mat, spec: RateSpec) -> Result<f64> {
    if k.shape() != (dec.abar.nrows(), dec.cbar.nrows()) {
        return Err(Error::Dimension(format!(
            "K_{} is {}x{}, expected {}x{}",
            dec.agent + 1,
            k.nrows(),
            k.ncols(),
            dec.abar.nrows(),
            dec.cbar.nrows()
        )));
    }
    let closed = &dec.abar + k * &dec.cbar;
    check_rate(&closed, spec.lambda_bar, dec.agent)?;
    observer_constant(&closed, spec.lambda_bar)
}

/// True iff the projections' images meet only at zero.
pub fn images_trivially_intersect(projections: &[Mat]) -> bool {
    let Some(first) = projections.first() else { return false };
    let n = first.nrows();
    let mut stacked = Mat::zeros(n * projections.len(), n);
    for (i, p) in projections.iter().enumerate() {
        stacked.view_mut((i * n, 0), (n, n)).copy_from(&(Mat::identity(n, n) - p));
    }
    rank(&stacked) == n
}

/// Outcome of a ρ computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEstimate {
    pub value: f64,
    /// False for the sampled upper-bound mode.
    pub certified: bool,
}

/// Largest vertex count for which ρ is enumerated exactly.
pub const RHO_EXACT_MAX_AGENTS: usize = 4;

/// Length `(m−1)²+1` of the products entering ρ.
pub fn covering_length(m: usize) -> usize {
    (m - 1) * (m - 1) + 1
}

/// Absolute margin on the pruning bound.
const PRUNE_SLACK: f64 = 1e-13;

/// Exact maximum of `||P_{i_L} ⋯ P_{i_1}||` over sequences of length `len`,
/// restricted to sequences using every index when `covering` is set.
///
/// Products are built left-multiplying from `P_{i_1}`. Subtrees whose prefix
/// norm already falls below the running maximum are skipped, which is exact
/// because every factor has norm at most one.
pub fn max_product_norm(projections: &[Mat], len: usize, covering: bool) -> f64 {
    let m = projections.len();
    if m == 0 || len == 0 {
        return 0.0;
    }
    let full: u32 = if m >= 32 { u32::MAX } else { (1u32 << m) - 1 };
    let target = if covering { full } else { 0 };
    let best = AtomicU64::new(0f64.to_bits());

    struct Walk<'a> {
        ps: &'a [Mat],
        len: usize,
        target: u32,
        best: &'a AtomicU64,
    }

    impl Walk<'_> {
        fn best(&self) -> f64 {
            f64::from_bits(self.best.load(Ordering::Relaxed))
        }

        fn visit(&self, x: &Mat, depth: usize, covered: u32) {
            let remaining = self.len - depth;
            let missing = (self.target & !covered).count_ones() as usize;
            if missing > remaining {
                return;
            }
            let fro = x.norm();
            // Products of an exact zero stay exactly zero.
            if fro == 0.0 {
                return;
            }
            // Rounded products can exceed the exact bound by a few ulps of the unit-norm
            // factors, so the Frobenius cut keeps an absolute margin.
            let fro = fro * (1.0 + 1e-12) + PRUNE_SLACK;
            if remaining == 0 {
                if fro >= self.best() {
                    let v = spectral_norm(x);
                    self.best.fetch_max(v.to_bits(), Ordering::Relaxed);
                }
                return;
            }
            if fro < self.best() {
                return;
            }
            for (i, p) in self.ps.iter().enumerate() {
                self.visit(&(p * x), depth + 1, covered | (1 << i));
            }
        }
    }

    let walk = Walk { ps: projections, len, target, best: &best };
    let starts: Vec<(usize, usize)> = if len >= 2 {
        (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).collect()
    } else {
        (0..m).map(|a| (a, usize::MAX)).collect()
    };
    starts.par_iter().for_each(|&(a, b)| {
        if b == usize::MAX {
            walk.visit(&projections[a], 1, 1 << a);
        } else {
            walk.visit(&(&projections[b] * &projections[a]), 2, (1 << a) | (1 << b));
        }
    });
    f64::from_bits(best.load(Ordering::Relaxed))
}

/// ρ: the largest 2-norm among covering products of length `(m−1)²+1`.
pub fn compute_rho(projections: &[Mat]) -> Result<RhoEstimate> {
    let m = projections.len();
    if m > RHO_EXACT_MAX_AGENTS {
        return Err(Error::Certificate(format!(
            "exact ρ enumeration is limited to m ≤ {RHO_EXACT_MAX_AGENTS} (m = {m}); use the sampled upper-bound mode"
        )));
    }
    check_projections(projections)?;
    let value = max_product_norm(projections, covering_length(m), true);
    if value >= 1.0 - 1e-12 {
        return Err(Error::Certificate(format!("ρ = {value} is not below 1")));
    }
    Ok(RhoEstimate { value, certified: true })
}

/// Non-certified ρ estimate from `samples` random covering sequences.
pub fn compute_rho_sampled(projections: &[Mat], samples: usize, seed: u64) -> Result<RhoEstimate> {
    check_projections(projections)?;
    let m = projections.len();
    let len = covering_length(m);
    let full: u64 = if m >= 64 { u64::MAX } else { (1u64 << m) - 1 };
    let chunks = 64usize;
    let per = samples.div_ceil(chunks);
    let value = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut best: f64 = 0.0;
            let mut seq = vec![0usize; len];
            let mut done = 0;
            while done < per {
                let mut mask = 0u64;
                for s in seq.iter_mut() {
                    *s = rng.gen_range(0..m);
                    mask |= 1 << *s;
                }
                if mask != full {
                    continue;
                }
                done += 1;
                let mut x = projections[seq[0]].clone();
                for &i in &seq[1..] {
                    x = &projections[i] * x;
                }
                best = best.max(spectral_norm(&x));
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(RhoEstimate { value, certified: false })
}

fn check_projections(projections: &[Mat]) -> Result<()> {
    if projections.is_empty() {
        return Err(Error::Precondition("no projections".into()));
    }
    let n = projections[0].nrows();
    if projections.iter().any(|p| p.shape() != (n, n)) {
        return Err(Error::Dimension("projections must all be n x n".into()));
    }
    if !images_trivially_intersect(projections) {
        return Err(Error::Certificate(
            "the unobservable spaces share a nonzero vector (joint observability fails)".into(),
        ));
    }
    Ok(())
}

/// `α = 1 − (m−1)(1−ρ)/m^{(m−1)²}`; a single agent has `α = ρ`.
pub fn compute_alpha(rho: f64, m: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Certificate(format!("ρ = {rho} outside [0, 1)")));
    }
    if m == 0 {
        return Err(Error::Precondition("no agents".into()));
    }
    if m == 1 {
        return Ok(rho);
    }
    let mf = m as f64;
    Ok(1.0 - (mf - 1.0) * (1.0 - rho) / mf.powi(((m - 1) * (m - 1)) as i32))
}

/// Refuses iteration counts no simulation could execute.
const Q_LIMIT: f64 = 1e12;

fn ceil_ratio_plus_one(growth: f64, contraction: f64, what: &str) -> Result<usize> {
    if contraction == 0.0 {
        return Ok(1);
    }
    if !(0.0..1.0).contains(&contraction) {
        return Err(Error::Certificate(format!("{what} = {contraction} outside [0, 1)")));
    }
    let v = (growth / (1.0 / contraction).ln()).ceil() + 1.0;
    if !(v <= Q_LIMIT) {
        return Err(Error::Certificate(format!("{what} = {contraction} requires an iteration count beyond {Q_LIMIT:e}")));
    }
    Ok(v as usize)
}

/// Iteration count for straight averaging: `p = ⌈(λ+||A||)T / ln(1/α)⌉ + 1` and `q = p((m−1)²+1)`.
pub fn select_q(alpha: f64, m: usize, spec: RateSpec, a_norm: f64, period: f64) -> Result<(usize, usize)> {
    let growth = (spec.lambda + a_norm) * period;
    let p = ceil_ratio_plus_one(growth, alpha, "α")?;
    debug_assert!(alpha == 0.0 || (a_norm * period).exp() * alpha.powi(p as i32) < (-spec.lambda * period).exp());
    Ok((p * covering_length(m), p))
}

/// σ: the largest `||P(M_G ⊗ I)||` over symmetric connected graphs.
pub fn compute_sigma(projections: &[Mat]) -> Result<f64> {
    let m = projections.len();
    if m > 6 {
        return Err(Error::Certificate(format!("σ enumeration is limited to m ≤ 6 (m = {m})")));
    }
    check_projections(projections)?;
    let n = projections[0].nrows();
    let p = block_diag(projections);
    let sigma = symmetric_connected_graphs(m)
        .par_iter()
        .map(|g| {
            let mg = metropolis_style_matrix(g).expect("symmetric by construction");
            spectral_norm(&(&p * kron_identity_dense(&mg, n)))
        })
        .reduce(|| 0.0, f64::max);
    if sigma >= 1.0 - 1e-12 {
        return Err(Error::Certificate(format!("σ = {sigma} is not below 1")));
    }
    Ok(sigma)
}

/// Iteration count for convex averaging: `q = ⌈(λ+||A||)T / ln(1/σ)⌉ + 1`.
pub fn select_q_symmetric(sigma: f64, spec: RateSpec, a_norm: f64, period: f64) -> Result<usize> {
    ceil_ratio_plus_one((spec.lambda + a_norm) * period, sigma, "σ")
}

/// The constants `b`, `d` and `g` of the convergence proofs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProofConstants {
    /// `q e^{||A||T} |Q|`.
    pub b: f64,
    /// `c b e^{λT} / (1 − e^{−(λ̄−λ)T})`.
    pub d: f64,
    /// `2mq||A|| e^{||A||(T+β)}`; the mismatch term is bounded by `ε g`.
    pub g: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn proof_constants(
    q: usize,
    m: usize,
    c: f64,
    q_norm: f64,
    a_norm: f64,
    spec: RateSpec,
    period: f64,
    beta: f64,
) -> Result<ProofConstants> {
    if spec.lambda_bar <= spec.lambda {
        return Err(Error::Precondition("λ̄ must exceed λ".into()));
    }
    let qf = q as f64;
    let b = qf * (a_norm * period).exp() * q_norm;
    let d = c * b * (spec.lambda * period).exp() / (1.0 - (-(spec.lambda_bar - spec.lambda) * period).exp());
    let g = 2.0 * m as f64 * qf * a_norm * (a_norm * (period + beta)).exp();
    Ok(ProofConstants { b, d, g })
}

/// `|Q|` for the block-diagonal `Q = diag(Q_1, …, Q_m)`.
pub fn q_block_norm(decs: &[ChannelDecomposition]) -> f64 {
    decs.iter().map(|d| spectral_norm(&d.q)).fold(0.0, f64::max)
}

/// One row of the q* table.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetDesign {
    /// Surviving agents, 0-based.
    pub agents: Vec<usize>,
    pub rho: f64,
    pub alpha: f64,
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResilienceReport {
    pub vbar: usize,
    pub subsets: Vec<SubsetDesign>,
    pub q_star: usize,
}

fn label(agents: &[usize]) -> String {
    let names: Vec<String> = agents.iter().map(|a| (a + 1).to_string()).collect();
    format!("{{{}}}", names.join(","))
}

/// Subsets of `0..m` with at least `m − vbar` elements, largest first.
pub fn surviving_subsets(m: usize, vbar: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0u64..(1 << m))
        .filter(|mask| mask.count_ones() as usize + vbar >= m)
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    out.sort_by(|a: &Vec<usize>, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    out
}

/// q*: the largest straight-averaging `q_d` over every subset that survives the loss of up to `vbar` agents.
pub fn resilience_qstar(
    plant: &LtiPlant,
    decs: &[ChannelDecomposition],
    sched: &GraphSchedule,
    vbar: usize,
    spec: RateSpec,
    period: f64,
) -> Result<ResilienceReport> {
    let m = plant.agents();
    if vbar >= m {
        return Err(Error::Precondition(format!("cannot lose {vbar} of {m} agents")));
    }
    let a_norm = spectral_norm(plant.a());
    let subsets = surviving_subsets(m, vbar);
    // Smallest subsets first, so the reported failure is the most basic one.
    let mut by_size: Vec<&Vec<usize>> = subsets.iter().collect();
    by_size.sort_by_key(|a| a.len());
    for agents in by_size {
        if !check_joint_observability(plant, agents)? {
            return Err(Error::Certificate(format!("subset {} is not jointly observable", label(agents))));
        }
        if let Some(g) = sched.graphs().find(|g| !is_strongly_connected(&g.induced(agents))) {
            return Err(Error::Certificate(format!(
                "subset {} is not strongly connected in scheduled graph with arcs {:?}",
                label(agents),
                g.arcs().iter().map(|(a, b)| (a + 1, b + 1)).collect::<Vec<_>>()
            )));
        }
    }
    let mut rows = Vec::new();
    for agents in subsets {
        let ps: Vec<Mat> = agents.iter().map(|&i| decs[i].p.clone()).collect();
        let rho = compute_rho(&ps)?.value;
        let alpha = compute_alpha(rho, agents.len())?;
        let (q, p) = select_q(alpha, agents.len(), spec, a_norm, period)?;
        rows.push(SubsetDesign { agents, rho, alpha, p, q });
    }
    let q_star = rows.iter().map(|r| r.q).max().unwrap_or(1);
    Ok(ResilienceReport { vbar, subsets: rows, q_star })
}

/// Everything the simulator and the bound checks need from the design stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignCertificate {
    pub rates: RateSpec,
    pub period: f64,
    pub beta: f64,
    pub averaging: Averaging,
    pub gains: Vec<Mat>,
    /// `c_i` per agent.
    pub obs_constants: Vec<f64>,
    /// `c = max c_i`.
    pub c: f64,
    pub rho: RhoEstimate,
    pub alpha: f64,
    pub sigma: Option<f64>,
    /// Straight-averaging bound `q = p((m−1)²+1)`.
    pub q_straight: usize,
    pub p: usize,
    /// Convex-averaging bound, when the schedule is symmetric.
    pub q_convex: Option<usize>,
    pub q_star: Option<ResilienceReport>,
    /// Iteration count the simulation runs with.
    pub q: usize,
    /// Whether `q` meets the bound of the selected averaging rule.
    pub q_certified: bool,
    pub a_norm: f64,
    pub q_norm: f64,
    pub constants: ProofConstants,
}

/// Inputs to [`certify`].
#[derive(Debug, Clone)]
pub struct DesignRequest<'a> {
    pub plant: &'a LtiPlant,
    pub decs: &'a [ChannelDecomposition],
    pub schedule: &'a GraphSchedule,
    pub rates: RateSpec,
    pub period: f64,
    pub beta: f64,
    pub averaging: Averaging,
    /// `None` selects the certified count.
    pub q: Option<usize>,
    pub gain_overrides: &'a [Option<Mat>],
    /// Vertex-loss tolerance `v̄` for q*; zero disables it.
    pub vbar: usize,
}

/// Runs the whole design pipeline.
pub fn certify(req: &DesignRequest) -> Result<DesignCertificate> {
    let m = req.plant.agents();
    if req.decs.len() != m {
        return Err(Error::Dimension(format!("{} decompositions for {m} agents", req.decs.len())));
    }
    let mut gains = Vec::with_capacity(m);
    let mut obs_constants = Vec::with_capacity(m);
    for (i, dec) in req.decs.iter().enumerate() {
        match req.gain_overrides.get(i).and_then(|k| k.as_ref()) {
            Some(k) => {
                obs_constants.push(validate_gain(dec, k, req.rates)?);
                gains.push(k.clone());
            }
            None => {
                let (k, c) = design_gain(dec, req.rates)?;
                gains.push(k);
                obs_constants.push(c);
            }
        }
    }
    let c = obs_constants.iter().copied().fold(0.0, f64::max);
    let ps: Vec<Mat> = req.decs.iter().map(|d| d.p.clone()).collect();
    let a_norm = spectral_norm(req.plant.a());
    let rho = if m <= RHO_EXACT_MAX_AGENTS { compute_rho(&ps)? } else { compute_rho_sampled(&ps, 1_000_000, 0)? };
    let alpha = compute_alpha(rho.value, m)?;
    let (q_straight, p) = select_q(alpha, m, req.rates, a_norm, req.period)?;

    let symmetric = req.schedule.graphs().all(|g| g.is_symmetric());
    if req.averaging == Averaging::Convex && !symmetric {
        return Err(Error::Precondition("convex averaging needs every scheduled graph to be symmetric".into()));
    }
    let (sigma, q_convex) = if symmetric && m <= 6 {
        let s = compute_sigma(&ps)?;
        (Some(s), Some(select_q_symmetric(s, req.rates, a_norm, req.period)?))
    } else {
        (None, None)
    };
    let q_star = if req.vbar > 0 {
        Some(resilience_qstar(req.plant, req.decs, req.schedule, req.vbar, req.rates, req.period)?)
    } else {
        None
    };
    let bound = match req.averaging {
        Averaging::Straight => q_star.as_ref().map_or(q_straight, |r| r.q_star),
        Averaging::Convex => q_convex.expect("symmetric schedule"),
    };
    let q = req.q.unwrap_or(bound);
    let q_certified = q >= bound && rho.certified;
    let q_norm = q_block_norm(req.decs);
    let constants = proof_constants(q, m, c, q_norm, a_norm, req.rates, req.period, req.beta)?;
    Ok(DesignCertificate {
        rates: req.rates,
        period: req.period,
        beta: req.beta,
        averaging: req.averaging,
        gains,
        obs_constants,
        c,
        rho,
        alpha,
        sigma,
        q_straight,
        p,
        q_convex,
        q_star,
        q,
        q_certified,
        a_norm,
        q_norm,
        constants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::decompose_channel;
    use crate::reference::{four_channel_plant, graph_a, reference_gain, reference_l};

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&crate::matrix::Vector::from_row_slice(v))
    }

    #[test]
    fn scalar_gain() {
        let dec = ChannelDecomposition {
            agent: 0,
            l: Mat::identity(1, 1),
            abar: Mat::zeros(1, 1),
            cbar: Mat::identity(1, 1),
            q: Mat::identity(1, 1),
            p: Mat::zeros(1, 1),
        };
        let (k, c) = design_gain(&dec, RateSpec::new(1.0, 3.0).unwrap()).unwrap();
        assert!((k[(0, 0)] + 3.0).abs() < 1e-12);
        assert!((c - C_SAFETY).abs() < 1e-12);
    }

    #[test]
    fn reference_gain_rate() {
        let plant = four_channel_plant();
        let dec = crate::plant::decompose_channel_with(&plant, 0, Some(&reference_l(0))).unwrap();
        let closed = &dec.abar + reference_gain(0) * &dec.cbar;
        assert!(spectral_abscissa(&closed) <= -2.0);
    }

    #[test]
    fn designed_gains_meet_rate() {
        let plant = four_channel_plant();
        let spec = RateSpec::new(2.0, 3.0).unwrap();
        for i in 0..4 {
            let dec = decompose_channel(&plant, i).unwrap();
            let (k, c) = design_gain(&dec, spec).unwrap();
            let closed = &dec.abar + &k * &dec.cbar;
            assert!(spectral_abscissa(&closed) <= -3.0 + 1e-8);
            assert!(c >= 1.0);
        }
    }

    #[test]
    fn rho_of_complementary_projections() {
        let ps = [diag(&[1.0, 0.0]), diag(&[0.0, 1.0])];
        assert_eq!(compute_rho(&ps).unwrap().value, 0.0);
        assert_eq!(max_product_norm(&ps, 2, false), 1.0);
    }

    #[test]
    fn rho_rejects_shared_image() {
        let ps = [diag(&[1.0, 0.0]), diag(&[1.0, 1.0])];
        assert!(matches!(compute_rho(&ps), Err(Error::Certificate(_))));
    }

    #[test]
    fn reference_plant_rho_is_zero() {
        let plant = four_channel_plant();
        let ps: Vec<Mat> = (0..4).map(|i| decompose_channel(&plant, i).unwrap().p).collect();
        let rho = compute_rho(&ps).unwrap();
        assert!(rho.value < 1e-12);
        let alpha = compute_alpha(rho.value, 4).unwrap();
        assert!((alpha - (1.0 - 3.0 * (1.0 - rho.value) / 262_144.0)).abs() < 1e-15);
    }

    #[test]
    fn alpha_formula() {
        assert_eq!(compute_alpha(0.0, 2).unwrap(), 0.5);
        assert!(compute_alpha(1.0, 3).is_err());
        assert!(compute_alpha(1.0 - 1e-9, 3).unwrap() < 1.0);
    }

    #[test]
    fn q_selection() {
        let spec = RateSpec::new(1.0, 2.0).unwrap();
        let t = 1.0;
        let a_norm = 2f64.ln() - 1.0;
        // (λ + ||A||)T = ln 2 and α = 1/2 give a ratio of exactly one.
        let (q, p) = select_q(0.5, 3, spec, a_norm, t).unwrap();
        assert_eq!((q, p), (10, 2));
        assert_eq!(select_q(0.0, 3, spec, 1.0, t).unwrap(), (5, 1));
        let growth = 3.0 - 1.0;
        assert_eq!(select_q_symmetric((-1f64).exp(), spec, growth, t).unwrap(), 4);
        assert_eq!(select_q_symmetric(0.0, spec, growth, t).unwrap(), 1);
        assert!(select_q(0.9, 3, spec, 1.0, t).unwrap().0 < select_q(0.99, 3, spec, 1.0, t).unwrap().0);
    }

    #[test]
    fn constants_limits() {
        let spec = RateSpec::new(1.0, 1e6).unwrap();
        let k = proof_constants(1, 2, 1.0, 1.0, 0.0, spec, 1.0, 0.1).unwrap();
        assert_eq!(k.b, 1.0);
        assert!((k.d - 1f64.exp()).abs() < 1e-9);
        assert_eq!(k.g, 0.0);
    }

    #[test]
    fn sigma_below_one_and_less_demanding() {
        let plant = four_channel_plant();
        let spec = RateSpec::new(2.0, 3.0).unwrap();
        let ps: Vec<Mat> = (0..4).map(|i| decompose_channel(&plant, i).unwrap().p).collect();
        let sigma = compute_sigma(&ps).unwrap();
        assert!(sigma < 1.0);
        let a_norm = spectral_norm(plant.a());
        let alpha = compute_alpha(compute_rho(&ps).unwrap().value, 4).unwrap();
        let q19 = select_q(alpha, 4, spec, a_norm, 1.0).unwrap().0;
        let q24 = select_q_symmetric(sigma, spec, a_norm, 1.0).unwrap();
        assert!(q24 <= q19);
        assert_eq!(compute_sigma(&[Mat::zeros(2, 2), Mat::zeros(2, 2)]).unwrap(), 0.0);
    }

    #[test]
    fn qstar_over_surviving_subsets() {
        let plant = four_channel_plant();
        let decs: Vec<_> = (0..4).map(|i| decompose_channel(&plant, i).unwrap()).collect();
        let spec = RateSpec::new(2.0, 3.0).unwrap();
        let sched = GraphSchedule::constant(graph_a(), 10.0).unwrap();
        let r0 = resilience_qstar(&plant, &decs, &sched, 0, spec, 1.0).unwrap();
        assert_eq!(r0.subsets.len(), 1);
        let r1 = resilience_qstar(&plant, &decs, &sched, 1, spec, 1.0).unwrap();
        assert_eq!(r1.subsets.len(), 5);
        assert_eq!(r1.q_star, r0.q_star);
        let err = resilience_qstar(&plant, &decs, &sched, 3, spec, 1.0).unwrap_err();
        assert!(err.to_string().contains("not jointly observable"));
    }
}
