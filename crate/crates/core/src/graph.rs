//! Neighbor graphs with self-arcs, their averaging matrices, and the
//! connectivity and redundancy predicates.

use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::timing::TimingConfig;

/// Largest vertex count a graph may have (vertex sets are stored as bitmasks).
pub const MAX_VERTICES: usize = 64;

/// Directed graph on `m` vertices; an arc `j → i` means agent `j` is a neighbor of agent `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiGraph {
    m: usize,
    /// `in_mask[i]` has bit `j` set iff `j → i`.
    in_mask: Vec<u64>,
}

fn bit(j: usize) -> u64 {
    1u64 << j
}

fn full_mask(m: usize) -> u64 {
    if m == 64 {
        u64::MAX
    } else {
        bit(m) - 1
    }
}

impl DiGraph {
    /// Graph with the given `(from, to)` arcs plus every self-arc.
    pub fn from_arcs(m: usize, arcs: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::without_self_arcs(m, arcs)?;
        for i in 0..m {
            g.in_mask[i] |= bit(i);
        }
        Ok(g)
    }

    /// Graph with exactly the given arcs; self-arcs are not added.
    pub fn without_self_arcs(m: usize, arcs: &[(usize, usize)]) -> Result<Self> {
        if m == 0 || m > MAX_VERTICES {
            return Err(Error::InvalidGraph(format!("vertex count {m} outside 1..={MAX_VERTICES}")));
        }
        let mut in_mask = vec![0u64; m];
        for &(from, to) in arcs {
            if from >= m || to >= m {
                return Err(Error::InvalidGraph(format!("arc {}→{} outside {m} vertices", from + 1, to + 1)));
            }
            in_mask[to] |= bit(from);
        }
        Ok(Self { m, in_mask })
    }

    pub fn complete(m: usize) -> Self {
        Self { m, in_mask: vec![full_mask(m); m] }
    }

    pub fn self_loops(m: usize) -> Self {
        Self { m, in_mask: (0..m).map(bit).collect() }
    }

    /// Directed cycle `1 → 2 → … → m → 1` with self-arcs.
    pub fn directed_cycle(m: usize) -> Self {
        let arcs: Vec<(usize, usize)> = (0..m).map(|i| (i, (i + 1) % m)).collect();
        Self::from_arcs(m, &arcs).expect("in range")
    }

    pub fn vertex_count(&self) -> usize {
        self.m
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.in_mask[to] & bit(from) != 0
    }

    pub fn in_mask(&self, i: usize) -> u64 {
        self.in_mask[i]
    }

    pub fn has_all_self_arcs(&self) -> bool {
        (0..self.m).all(|i| self.has_arc(i, i))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.m).all(|i| (0..self.m).all(|j| self.has_arc(i, j) == self.has_arc(j, i)))
    }

    /// Non-self arcs as `(from, to)` pairs.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        (0..self.m)
            .flat_map(|to| (0..self.m).map(move |from| (from, to)))
            .filter(|&(from, to)| from != to && self.has_arc(from, to))
            .collect()
    }

    /// Induced subgraph on `keep` (ascending 0-based labels), relabelled `0..keep.len()`.
    pub fn induced(&self, keep: &[usize]) -> DiGraph {
        let in_mask = keep
            .iter()
            .map(|&to| {
                keep.iter()
                    .enumerate()
                    .filter(|(_, &from)| self.has_arc(from, to))
                    .fold(0u64, |acc, (k, _)| acc | bit(k))
            })
            .collect();
        DiGraph { m: keep.len(), in_mask }
    }

    fn out_mask(&self, j: usize) -> u64 {
        (0..self.m).filter(|&i| self.has_arc(j, i)).fold(0, |acc, i| acc | bit(i))
    }

    /// Strong connectivity of the subgraph induced by the vertices in `alive`.
    pub fn is_strongly_connected_within(&self, alive: u64) -> bool {
        let alive = alive & full_mask(self.m);
        if alive == 0 {
            return false;
        }
        let start = alive.trailing_zeros() as usize;
        let reach = |succ: &dyn Fn(usize) -> u64| {
            let mut seen = bit(start);
            let mut frontier = bit(start);
            while frontier != 0 {
                let v = frontier.trailing_zeros() as usize;
                frontier &= frontier - 1;
                let next = succ(v) & alive & !seen;
                seen |= next;
                frontier |= next;
            }
            seen
        };
        let forward = reach(&|v| self.out_mask(v));
        let backward = reach(&|v| self.in_mask[v]);
        forward == alive && backward == alive
    }
}

/// Labels of agent `i`'s neighbors (always includes `i` for well-formed graphs).
pub fn neighbors(g: &DiGraph, i: usize) -> Vec<usize> {
    (0..g.m).filter(|&j| g.has_arc(j, i)).collect()
}

pub fn is_strongly_connected(g: &DiGraph) -> bool {
    g.is_strongly_connected_within(full_mask(g.m))
}

/// Row-stochastic `D⁻¹A'`: row `i` spreads weight `1/|N_i|` over agent `i`'s neighbors.
pub fn flocking_matrix(g: &DiGraph) -> Result<Mat> {
    if !g.has_all_self_arcs() {
        return Err(Error::InvalidGraph("flocking matrix needs a self-arc at every vertex".into()));
    }
    let m = g.m;
    let mut f = Mat::zeros(m, m);
    for i in 0..m {
        let nbrs = neighbors(g, i);
        let w = 1.0 / nbrs.len() as f64;
        for j in nbrs {
            f[(i, j)] = w;
        }
    }
    Ok(f)
}

/// `I − L/(m+1)` with `L` the Laplacian of the undirected graph underlying `g`.
pub fn metropolis_style_matrix(g: &DiGraph) -> Result<Mat> {
    if !g.is_symmetric() {
        return Err(Error::Precondition("convex-combination weights need a symmetric graph".into()));
    }
    let m = g.m;
    let w = 1.0 / (m as f64 + 1.0);
    let mut out = Mat::identity(m, m);
    for (from, to) in g.arcs() {
        out[(to, from)] += w;
        out[(to, to)] -= w;
    }
    Ok(out)
}

/// Calls `visit` on every subset of `items` with at most `max` elements; stops early when it returns false.
fn for_each_subset_upto<T: Copy>(items: &[T], max: usize, visit: &mut dyn FnMut(&[T]) -> bool) -> bool {
    fn rec<T: Copy>(items: &[T], start: usize, left: usize, cur: &mut Vec<T>, visit: &mut dyn FnMut(&[T]) -> bool) -> bool {
        if !visit(cur) {
            return false;
        }
        if left == 0 {
            return true;
        }
        for k in start..items.len() {
            cur.push(items[k]);
            let go_on = rec(items, k + 1, left - 1, cur, visit);
            cur.pop();
            if !go_on {
                return false;
            }
        }
        true
    }
    rec(items, 0, max, &mut Vec::new(), visit)
}

/// Strongly connected after the removal of any `a` or fewer non-self arcs.
pub fn is_arc_redundant_sc(g: &DiGraph, a: usize) -> bool {
    let arcs = g.arcs();
    for_each_subset_upto(&arcs, a, &mut |removed| {
        let mut h = g.clone();
        for &(from, to) in removed {
            h.in_mask[to] &= !bit(from);
        }
        is_strongly_connected(&h)
    })
}

/// Strongly connected after the removal of any `v` or fewer vertices.
pub fn is_vertex_redundant_sc(g: &DiGraph, v: usize) -> Result<bool> {
    if v >= g.m {
        return Err(Error::Precondition(format!("cannot remove {v} of {} vertices", g.m)));
    }
    let vertices: Vec<usize> = (0..g.m).collect();
    Ok(for_each_subset_upto(&vertices, v, &mut |removed| {
        let alive = removed.iter().fold(full_mask(g.m), |acc, &r| acc & !bit(r));
        g.is_strongly_connected_within(alive)
    }))
}

/// Every symmetric, connected graph with self-arcs on `m` vertices.
pub fn symmetric_connected_graphs(m: usize) -> Vec<DiGraph> {
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    (0u64..(1u64 << pairs.len()))
        .filter_map(|sel| {
            let arcs: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| sel & bit(*k) != 0)
                .flat_map(|(_, &(i, j))| [(i, j), (j, i)])
                .collect();
            let g = DiGraph::from_arcs(m, &arcs).expect("in range");
            is_strongly_connected(&g).then_some(g)
        })
        .collect()
}

/// Piecewise-constant, right-continuous graph signal on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    segments: Vec<(f64, DiGraph)>,
    horizon: f64,
}

impl GraphSchedule {
    pub fn new(segments: Vec<(f64, DiGraph)>, horizon: f64) -> Result<Self> {
        let Some((first, g0)) = segments.first() else {
            return Err(Error::InvalidGraph("schedule has no segments".into()));
        };
        if *first != 0.0 {
            return Err(Error::InvalidGraph(format!("first segment starts at {first}, expected 0")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGraph(format!("horizon {horizon} must be positive")));
        }
        let m = g0.vertex_count();
        for w in segments.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidGraph("segment start times must strictly increase".into()));
            }
        }
        if segments.iter().any(|(_, g)| g.vertex_count() != m || !g.has_all_self_arcs()) {
            return Err(Error::InvalidGraph("every scheduled graph needs the same vertex set and all self-arcs".into()));
        }
        Ok(Self { segments, horizon })
    }

    pub fn constant(g: DiGraph, horizon: f64) -> Result<Self> {
        Self::new(vec![(0.0, g)], horizon)
    }

    /// Cycles through `graphs`, switching every `dwell` time units.
    pub fn alternating(graphs: &[DiGraph], dwell: f64, horizon: f64) -> Result<Self> {
        if graphs.is_empty() || !(dwell > 0.0) {
            return Err(Error::InvalidGraph("alternating schedule needs graphs and a positive dwell".into()));
        }
        let count = (horizon / dwell).ceil().max(1.0) as usize;
        let segments = (0..count).map(|k| (k as f64 * dwell, graphs[k % graphs.len()].clone())).collect();
        Self::new(segments, horizon)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn vertex_count(&self) -> usize {
        self.segments[0].1.vertex_count()
    }

    pub fn segments(&self) -> &[(f64, DiGraph)] {
        &self.segments
    }

    /// Times at which the graph changes.
    pub fn switch_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().skip(1).map(|(t, _)| *t)
    }

    /// Index of the segment active at `t`, with no horizon check.
    pub fn segment_index(&self, t: f64) -> usize {
        self.segments.partition_point(|(start, _)| *start <= t).saturating_sub(1)
    }

    pub fn graph_at(&self, t: f64) -> Result<&DiGraph> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Precondition(format!("t = {t} outside schedule horizon [0, {}]", self.horizon)));
        }
        Ok(&self.segments[self.segment_index(t)].1)
    }

    /// Graph at `t`, clamping times before 0 to the first segment and after the horizon to the last.
    pub fn graph_at_clamped(&self, t: f64) -> &DiGraph {
        &self.segments[self.segment_index(t)].1
    }

    pub fn graphs(&self) -> impl Iterator<Item = &DiGraph> {
        self.segments.iter().map(|(_, g)| g)
    }
}

/// True iff no switch time falls strictly inside any window `I_s(k)` within the horizon.
pub fn validate_constancy(sched: &GraphSchedule, timing: &TimingConfig) -> bool {
    first_constancy_violation(sched, timing).is_none()
}

/// The first `(switch time, s, k)` with the switch strictly inside `I_s(k)`, if any.
pub fn first_constancy_violation(sched: &GraphSchedule, timing: &TimingConfig) -> Option<(f64, usize, usize)> {
    let eps = timing.max_epsilon();
    let (t_period, delta, beta, q) = (timing.period, timing.delta, timing.beta, timing.q);
    for t_sw in sched.switch_times() {
        // Candidate windows: those whose centres lie within eps of the switch.
        let s_hi = ((t_sw - beta + eps) / t_period).floor();
        let s_lo = ((t_sw - beta - eps - (q as f64 - 1.0) * delta) / t_period).floor().max(0.0);
        let mut s = s_lo as usize;
        while s as f64 <= s_hi {
            let base = s as f64 * t_period + beta;
            let k_mid = ((t_sw - base) / delta).round() as i64 + 1;
            for k in (k_mid - 1).max(1)..=(k_mid + 1).min(q as i64) {
                let centre = base + (k as f64 - 1.0) * delta;
                if t_sw > centre - eps && t_sw < centre + eps {
                    return Some((t_sw, s, k as usize));
                }
            }
            s += 1;
        }
    }
    None
}
