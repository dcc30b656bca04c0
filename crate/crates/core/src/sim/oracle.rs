//! Event-to-event error recursion built from matrices alone.
//!
//! With `π_s(k)` the stacked iterate errors, one round is
//! `π_s(k) = P(W_s(k) ⊗ I)π_s(k−1) + Qē(s−1) − PΓ_s(k)x((s−1)T)`, and
//! `e(s) = e^{ÃT}π_s(q)`. Rounds sharing a mixing matrix are folded with
//! repeated squaring, so certified iteration counts in the millions cost a
//! few dozen matrix products per event.

use crate::design::Averaging;
use crate::error::{Error, Result};
use crate::graph::{flocking_matrix, metropolis_style_matrix, GraphSchedule};
use crate::matrix::{block_diag, kron_identity_dense, mat_exp, Mat, Vector};
use crate::plant::{ChannelDecomposition, LtiPlant};
use crate::sim::consensus::mixing_row;
use crate::timing::{Mode, TimingConfig};

#[derive(Debug, Clone)]
pub struct OracleInput<'a> {
    pub plant: &'a LtiPlant,
    pub decs: &'a [ChannelDecomposition],
    pub gains: &'a [Mat],
    pub schedule: &'a GraphSchedule,
    pub timing: &'a TimingConfig,
    pub mode: Mode,
    pub averaging: Averaging,
    pub w0: &'a [Vector],
    pub xhat0: &'a [Vector],
    pub events: usize,
}

/// One event of the recursion `e(s) = A(s)e(s−1) + B(s)ē(s−1) + G(s)x((s−1)T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleStep {
    pub s: usize,
    /// `Φ_s(0)`, the product of all round matrices of the event.
    pub phi0: Mat,
    /// `A(s) = e^{ÃT}Φ_s(0)`.
    pub a: Mat,
    /// `B(s) = e^{ÃT} Σ_k Φ_s(k) Q`.
    pub b: Mat,
    /// Offset forcing term; zero unless event clocks differ.
    pub g: Mat,
    /// Mixing matrices in round order, with their repeat counts.
    pub mixing: Vec<(usize, Mat)>,
    /// Predicted stacked `e(s)`.
    pub error: Vector,
    /// Predicted stacked `ē(s)`.
    pub local_error: Vector,
}

/// `(M^r, I + M + … + M^{r−1})`.
fn power_and_sum(m: &Mat, mut r: usize) -> (Mat, Mat) {
    let dim = m.nrows();
    let mut acc = (Mat::identity(dim, dim), Mat::zeros(dim, dim));
    let mut base = (m.clone(), Mat::identity(dim, dim));
    while r > 0 {
        if r & 1 == 1 {
            acc = (&base.0 * &acc.0, &base.1 + &base.0 * &acc.1);
        }
        r >>= 1;
        if r > 0 {
            base = (&base.0 * &base.0, &base.1 + &base.0 * &base.1);
        }
    }
    acc
}

/// Largest `k' ≥ k` in `k..=q` with `f(k') == f(k)`, for `f` nondecreasing.
fn run_end(k: usize, q: usize, f: &impl Fn(usize) -> usize) -> usize {
    let v = f(k);
    let (mut lo, mut hi) = (k, q);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if f(mid) == v {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Mixing matrices of event `s` as `(rounds, W)` runs.
fn mixing_runs(input: &OracleInput, s: usize) -> Result<Vec<(usize, Mat)>> {
    let timing = input.timing;
    let sched = input.schedule;
    let m = timing.agents();
    let q = timing.q;
    let sf = s as f64 - 1.0;
    let graph_matrix = |seg: usize| -> Result<Mat> {
        let g = &sched.segments()[seg].1;
        match input.averaging {
            Averaging::Straight => flocking_matrix(g),
            Averaging::Convex => metropolis_style_matrix(g),
        }
    };
    let mut runs = Vec::new();
    let mut k = 1;
    match input.mode {
        Mode::Sync | Mode::Async => {
            // With shared event times (and constancy on every window when
            // jittered) the sources are the neighbor sets at (s−1)T + (k−1)Δ + β.
            let seg = |k: usize| sched.segment_index(sf * timing.period + (k as f64 - 1.0) * timing.delta + timing.beta);
            while k <= q {
                let end = run_end(k, q, &seg);
                runs.push((end - k + 1, graph_matrix(seg(k))?));
                k = end + 1;
            }
        }
        Mode::Mismatch => {
            let seg = |j: usize, k: usize| {
                let start = timing.start_offsets[j] + sf * timing.period;
                sched.segment_index(start + (k as f64 - 1.0) * timing.delta + timing.beta)
            };
            while k <= q {
                let end = (0..m).map(|j| run_end(k, q, &|kk| seg(j, kk))).min().expect("agents");
                let mut w = Mat::zeros(m, m);
                for i in 0..m {
                    let sources: Vec<usize> =
                        (0..m).filter(|&j| j == i || sched.segments()[seg(j, k)].1.has_arc(j, i)).collect();
                    for (j, v) in mixing_row(input.averaging, i, &sources, m) {
                        w[(i, j)] = v;
                    }
                }
                runs.push((end - k + 1, w));
                k = end + 1;
            }
        }
    }
    Ok(runs)
}

/// Predicts `e(s)` for `s = 1..=events` from the initial conditions.
pub fn oracle_recursion(input: &OracleInput) -> Result<Vec<OracleStep>> {
    let plant = input.plant;
    if plant.noise().is_some() {
        return Err(Error::Precondition("the error recursion does not model process noise".into()));
    }
    let (m, n) = (plant.agents(), plant.n());
    let timing = input.timing;
    let period = timing.period;
    let a = plant.a();
    let p = block_diag(&input.decs.iter().map(|d| d.p.clone()).collect::<Vec<_>>());
    let q_blk = block_diag(&input.decs.iter().map(|d| d.q.clone()).collect::<Vec<_>>());
    let exp_at = mat_exp(a, period)?;
    let exp_tilde = block_diag(&vec![exp_at.clone(); m]);
    let local_step = block_diag(
        &input
            .decs
            .iter()
            .zip(input.gains)
            .map(|(d, k)| mat_exp(&(&d.abar + k * &d.cbar), period))
            .collect::<Result<Vec<_>>>()?,
    );
    let offsets: Vec<f64> = (0..m)
        .map(|i| if input.mode == Mode::Mismatch { timing.start_offsets[i] } else { 0.0 })
        .collect();
    let shifts: Vec<Mat> = offsets.iter().map(|&t| mat_exp(a, t)).collect::<Result<_>>()?;

    let x0 = plant.x0();
    let mut e = Vector::zeros(m * n);
    let mut ebar = Vector::zeros(input.decs.iter().map(|d| d.observable_dim()).sum());
    let mut row = 0;
    for (i, shift) in shifts.iter().enumerate() {
        let xi = shift * x0;
        e.rows_mut(i * n, n).copy_from(&(&input.xhat0[i] - &xi));
        let ni = input.decs[i].observable_dim();
        ebar.rows_mut(row, ni).copy_from(&(&input.w0[i] - &input.decs[i].l * &xi));
        row += ni;
    }
    let mut x_nominal = x0.clone();

    let mut steps = Vec::with_capacity(input.events);
    for s in 1..=input.events {
        let mixing = mixing_runs(input, s)?;
        let dim = m * n;
        let mut pi = Mat::identity(dim, dim);
        let mut sum = Mat::zeros(dim, dim);
        let mut h = Mat::zeros(dim, n);
        for (rounds, w) in &mixing {
            let step = &p * kron_identity_dense(w, n);
            let (pow, psum) = power_and_sum(&step, *rounds);
            let mut gamma = Mat::zeros(dim, n);
            for i in 0..m {
                let mut blk = shifts[i].clone();
                for j in 0..m {
                    if w[(i, j)] != 0.0 {
                        blk -= &shifts[j] * w[(i, j)];
                    }
                }
                gamma.view_mut((i * n, 0), (n, n)).copy_from(&blk);
            }
            h = &psum * (-(&p * gamma)) + &pow * h;
            sum = psum + &pow * sum;
            pi = pow * pi;
        }
        let a_s = &exp_tilde * &pi;
        let b_s = &exp_tilde * &sum * &q_blk;
        let g_s = &exp_tilde * h;
        let next = &a_s * &e + &b_s * &ebar + &g_s * &x_nominal;
        ebar = &local_step * ebar;
        x_nominal = &exp_at * x_nominal;
        e = next;
        steps.push(OracleStep { s, phi0: pi, a: a_s, b: b_s, g: g_s, mixing, error: e.clone(), local_error: ebar.clone() });
    }
    Ok(steps)
}
