//! Source sets, mixing weights and the projected-consensus rounds.

use crate::design::Averaging;
use crate::error::Result;
use crate::graph::GraphSchedule;
use crate::matrix::{mat_exp, Mat, Vector};
use crate::plant::ChannelDecomposition;
use crate::timing::{Mode, TimingConfig};

/// Loss intervals `[t_loss, t_gain)` per agent.
#[derive(Debug, Clone, Default)]
pub(crate) struct Outages {
    pub intervals: Vec<Vec<(f64, f64)>>,
}

impl Outages {
    pub fn none(m: usize) -> Self {
        Self { intervals: vec![Vec::new(); m] }
    }

    pub fn active_at(&self, j: usize, t: f64) -> bool {
        !self.intervals[j].iter().any(|&(a, b)| t >= a && t < b)
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.intervals.iter().flatten().flat_map(|&(a, b)| [a, b]).filter(|t| t.is_finite())
    }
}

/// What the source sets of one event interval depend on.
pub(crate) struct EventRounds<'a> {
    pub sched: &'a GraphSchedule,
    pub timing: &'a TimingConfig,
    pub mode: Mode,
    pub s: usize,
    /// Agents that latched at the start of this event.
    pub participants: u64,
    pub outages: &'a Outages,
}

impl EventRounds<'_> {
    fn broadcast(&self, j: usize, k: usize) -> f64 {
        self.timing.broadcast_time(self.mode, j, self.s, k)
    }

    /// `S_is(k)` as a bitmask.
    pub fn mask(&self, i: usize, k: usize) -> u64 {
        let m = self.timing.agents();
        let mut mask = 1u64 << i;
        for j in 0..m {
            if j == i || self.participants & (1 << j) == 0 {
                continue;
            }
            let b = self.broadcast(j, k);
            if self.outages.active_at(j, b) && self.sched.graph_at_clamped(b).has_arc(j, i) {
                mask |= 1 << j;
            }
        }
        mask
    }

    pub fn masks(&self, k: usize) -> Vec<u64> {
        (0..self.timing.agents()).map(|i| self.mask(i, k)).collect()
    }

    /// Splits rounds `1..=q` into maximal runs with identical source sets.
    ///
    /// Away from every breakpoint (graph switch or outage boundary) a sender's
    /// broadcast stays on one side of it, because deviations are smaller than
    /// Δ; only the few rounds whose nominal broadcast lies next to a breakpoint
    /// are evaluated individually.
    pub fn runs(&self) -> Vec<Run> {
        let q = self.timing.q;
        let (delta, beta) = (self.timing.delta, self.timing.beta);
        let m = self.timing.agents();
        let starts: Vec<f64> = (0..m).map(|j| self.timing.event_start(self.mode, j, self.s)).collect();
        let lo = starts.iter().copied().fold(f64::INFINITY, f64::min) + beta - delta;
        let hi = starts.iter().copied().fold(f64::NEG_INFINITY, f64::max) + q as f64 * delta + beta + delta;
        let mut cuts = vec![1usize, q + 1];
        let breaks = self.sched.switch_times().chain(self.outages.breakpoints()).filter(|t| *t > lo && *t < hi);
        for tb in breaks {
            for &start in &starts {
                let kc = ((tb - start - beta) / delta).ceil() + 1.0;
                let kc = kc.clamp(0.0, q as f64 + 3.0) as usize;
                for c in kc.saturating_sub(2)..=kc + 3 {
                    if (1..=q + 1).contains(&c) {
                        cuts.push(c);
                    }
                }
            }
        }
        cuts.sort_unstable();
        cuts.dedup();
        let mut runs: Vec<Run> = Vec::new();
        for w in cuts.windows(2) {
            let masks = self.masks(w[0]);
            match runs.last_mut() {
                Some(last) if last.masks == masks => last.end = w[1],
                _ => runs.push(Run { start: w[0], end: w[1], masks }),
            }
        }
        runs
    }
}

/// Rounds `start..end` share the source sets `masks`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Run {
    pub start: usize,
    pub end: usize,
    pub masks: Vec<u64>,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start
    }
}

fn members(mask: u64) -> impl Iterator<Item = usize> {
    (0..64).filter(move |j| mask & (1 << j) != 0)
}

/// `S_is(k) = {j : j ∈ N_i(τ_js(k−1) + β)}`, always containing `i`.
pub fn source_set(sched: &GraphSchedule, timing: &TimingConfig, mode: Mode, i: usize, s: usize, k: usize) -> Vec<usize> {
    let m = timing.agents();
    let outages = Outages::none(m);
    let ctx = EventRounds { sched, timing, mode, s, participants: (1u64 << m) - 1, outages: &outages };
    members(ctx.mask(i, k)).collect()
}

/// Row `i` of the mixing matrix for source set `sources`.
pub fn mixing_row(averaging: Averaging, i: usize, sources: &[usize], m: usize) -> Vec<(usize, f64)> {
    match averaging {
        Averaging::Straight => {
            let w = 1.0 / sources.len() as f64;
            sources.iter().map(|&j| (j, w)).collect()
        }
        Averaging::Convex => {
            let w = 1.0 / (m as f64 + 1.0);
            let own = 1.0 - sources.len() as f64 * w;
            sources.iter().map(|&j| (j, if j == i { own + w } else { w })).collect()
        }
    }
}

/// Dense mixing matrix whose row `i` averages over `masks[i]`.
pub fn mixing_matrix(averaging: Averaging, masks: &[u64]) -> Mat {
    let m = masks.len();
    let mut w = Mat::zeros(m, m);
    for (i, &mask) in masks.iter().enumerate() {
        let src: Vec<usize> = members(mask).collect();
        for (j, v) in mixing_row(averaging, i, &src, m) {
            w[(i, j)] = v;
        }
    }
    w
}

/// One round: `z_is(k) = z̄ − Q_i(L_i z̄ − w_i)` with `z̄` the weighted average over the sources.
pub fn iterate_once(
    z: &[Vector],
    w: &[Vector],
    decs: &[ChannelDecomposition],
    sources: &[Vec<usize>],
    averaging: Averaging,
) -> Vec<Vector> {
    let m = z.len();
    (0..m)
        .map(|i| {
            let mut zbar = Vector::zeros(z[i].len());
            for (j, wt) in mixing_row(averaging, i, &sources[i], m) {
                zbar += &z[j] * wt;
            }
            let d = &decs[i];
            &zbar - &d.q * (&d.l * &zbar - &w[i])
        })
        .collect()
}

/// `x̂_i(t_is) = e^{AT} z_is(q)`.
pub fn event_reset(z_q: &Vector, a: &Mat, period: f64) -> Result<Vector> {
    Ok(mat_exp(a, period)? * z_q)
}

/// Flat, allocation-free version of [`iterate_once`] for long runs.
pub(crate) struct RoundEngine {
    m: usize,
    n: usize,
    /// Row-major `L_i` and `Q_i`.
    l: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    dims: Vec<usize>,
    z: Vec<f64>,
    next: Vec<f64>,
    resid: Vec<f64>,
    zbar: Vec<f64>,
}

impl RoundEngine {
    pub fn new(decs: &[ChannelDecomposition], n: usize) -> Self {
        let row_major = |a: &Mat| -> Vec<f64> { (0..a.nrows()).flat_map(|r| (0..a.ncols()).map(move |c| a[(r, c)])).collect() };
        let m = decs.len();
        Self {
            m,
            n,
            l: decs.iter().map(|d| row_major(&d.l)).collect(),
            q: decs.iter().map(|d| row_major(&d.q)).collect(),
            dims: decs.iter().map(|d| d.observable_dim()).collect(),
            z: vec![0.0; m * n],
            next: vec![0.0; m * n],
            resid: vec![0.0; n],
            zbar: vec![0.0; n],
        }
    }

    pub fn load(&mut self, z0: &[Vector]) {
        for (i, z) in z0.iter().enumerate() {
            self.z[i * self.n..(i + 1) * self.n].copy_from_slice(z.as_slice());
        }
    }

    pub fn agent(&self, i: usize) -> Vector {
        Vector::from_column_slice(&self.z[i * self.n..(i + 1) * self.n])
    }

    /// Runs `rounds` rounds with fixed sources; agents outside `updating` keep their iterate.
    pub fn run(&mut self, rows: &[Vec<(usize, f64)>], w: &[Vec<f64>], updating: u64, rounds: usize) {
        let (m, n) = (self.m, self.n);
        for _ in 0..rounds {
            for i in 0..m {
                let out = i * n;
                if updating & (1 << i) == 0 {
                    self.next[out..out + n].copy_from_slice(&self.z[out..out + n]);
                    continue;
                }
                self.zbar.iter_mut().for_each(|v| *v = 0.0);
                for &(j, wt) in &rows[i] {
                    let src = &self.z[j * n..(j + 1) * n];
                    for (acc, v) in self.zbar.iter_mut().zip(src) {
                        *acc += wt * v;
                    }
                }
                let ni = self.dims[i];
                let (l, q) = (&self.l[i], &self.q[i]);
                for r in 0..ni {
                    let row = &l[r * n..(r + 1) * n];
                    self.resid[r] = row.iter().zip(&self.zbar).map(|(a, b)| a * b).sum::<f64>() - w[i][r];
                }
                for c in 0..n {
                    let row = &q[c * ni..(c + 1) * ni];
                    let corr: f64 = row.iter().zip(&self.resid[..ni]).map(|(a, b)| a * b).sum();
                    self.next[out + c] = self.zbar[c] - corr;
                }
            }
            std::mem::swap(&mut self.z, &mut self.next);
        }
    }
}

pub(crate) fn rows_for(averaging: Averaging, masks: &[u64]) -> Vec<Vec<(usize, f64)>> {
    let m = masks.len();
    masks
        .iter()
        .enumerate()
        .map(|(i, &mask)| {
            let src: Vec<usize> = members(mask).collect();
            mixing_row(averaging, i, &src, m)
        })
        .collect()
}
