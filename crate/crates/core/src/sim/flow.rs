//! Exact continuous-time propagation. Every flow is an autonomous linear
//! system, so the state is advanced with matrix exponentials; the cosine
//! forcing is generated by an embedded harmonic oscillator.

use std::collections::HashMap;

use crate::error::Result;
use crate::matrix::{mat_exp, Mat, Vector};
use crate::plant::{ChannelDecomposition, LtiPlant, NoiseForcing};

/// Layout of the joint state `[x; (c, s, o); w_1..w_m; x̂_1..x̂_m]`.
///
/// `(c, s)` is the oscillator producing `amplitude·cos(ωt)` and `o` the
/// piecewise-constant offset; the three are present only with noise forcing.
#[derive(Debug, Clone)]
pub(crate) struct JointFlow {
    n: usize,
    noise: Option<NoiseForcing>,
    w_offsets: Vec<usize>,
    w_dims: Vec<usize>,
    xhat_offsets: Vec<usize>,
    dim: usize,
    a: Mat,
    /// `(Ā_i + K_i C̄_i, −K_i C_i)` per agent.
    observers: Vec<(Mat, Mat)>,
    cache: HashMap<(u64, u64, u64), Mat>,
}

impl JointFlow {
    pub fn new(plant: &LtiPlant, decs: &[ChannelDecomposition], gains: &[Mat]) -> Self {
        let n = plant.n();
        let noise = plant.noise().cloned();
        let mut at = n + if noise.is_some() { 3 } else { 0 };
        let mut w_offsets = Vec::new();
        let mut w_dims = Vec::new();
        for d in decs {
            w_offsets.push(at);
            w_dims.push(d.observable_dim());
            at += d.observable_dim();
        }
        let mut xhat_offsets = Vec::new();
        for _ in decs {
            xhat_offsets.push(at);
            at += n;
        }
        let observers = decs
            .iter()
            .zip(gains)
            .map(|(d, k)| (&d.abar + k * &d.cbar, -(k * plant.channel(d.agent))))
            .collect();
        Self { n, noise, w_offsets, w_dims, xhat_offsets, dim: at, a: plant.a().clone(), observers, cache: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Local observers of agents in `observers` and estimates of agents in `estimates` evolve; the rest hold.
    fn generator(&self, observers: u64, estimates: u64) -> Mat {
        let n = self.n;
        let mut g = Mat::zeros(self.dim, self.dim);
        g.view_mut((0, 0), (n, n)).copy_from(&self.a);
        if let Some(noise) = &self.noise {
            for r in 0..n {
                g[(r, n)] = noise.b[r];
                g[(r, n + 2)] = noise.b[r];
            }
            g[(n, n + 1)] = -noise.omega;
            g[(n + 1, n)] = noise.omega;
        }
        for (i, (f, kc)) in self.observers.iter().enumerate() {
            if observers & (1 << i) != 0 {
                let (wo, ni) = (self.w_offsets[i], self.w_dims[i]);
                g.view_mut((wo, wo), (ni, ni)).copy_from(f);
                g.view_mut((wo, 0), (ni, n)).copy_from(kc);
            }
            if estimates & (1 << i) != 0 {
                let xo = self.xhat_offsets[i];
                g.view_mut((xo, xo), (n, n)).copy_from(&self.a);
            }
        }
        g
    }

    /// Sets the forcing states to their closed-form values at `t`.
    pub fn sync_forcing(&self, state: &mut Vector, t: f64) {
        if let Some(noise) = &self.noise {
            let n = self.n;
            state[n] = noise.amplitude * (noise.omega * t).cos();
            state[n + 1] = noise.amplitude * (noise.omega * t).sin();
            state[n + 2] = noise.offset_at(t);
        }
    }

    /// Advances `state` from `t` by `dt`; see [`JointFlow::generator`] for the masks.
    pub fn advance(&mut self, state: &mut Vector, t: f64, dt: f64, observers: u64, estimates: u64) -> Result<()> {
        self.sync_forcing(state, t);
        if dt == 0.0 {
            return Ok(());
        }
        let key = (dt.to_bits(), observers, estimates);
        if !self.cache.contains_key(&key) {
            let e = mat_exp(&self.generator(observers, estimates), dt)?;
            self.cache.insert(key, e);
        }
        *state = &self.cache[&key] * &*state;
        Ok(())
    }

    pub fn x(&self, state: &Vector) -> Vector {
        state.rows(0, self.n).into_owned()
    }

    pub fn w(&self, state: &Vector, i: usize) -> Vector {
        state.rows(self.w_offsets[i], self.w_dims[i]).into_owned()
    }

    pub fn set_w(&self, state: &mut Vector, i: usize, w: &Vector) {
        state.rows_mut(self.w_offsets[i], self.w_dims[i]).copy_from(w);
    }

    pub fn xhat(&self, state: &Vector, i: usize) -> Vector {
        state.rows(self.xhat_offsets[i], self.n).into_owned()
    }

    pub fn set_xhat(&self, state: &mut Vector, i: usize, x: &Vector) {
        state.rows_mut(self.xhat_offsets[i], self.n).copy_from(x);
    }

    pub fn set_x(&self, state: &mut Vector, x: &Vector) {
        state.rows_mut(0, self.n).copy_from(x);
    }
}

/// Forcing breakpoints strictly between `lo` and `hi`.
fn cuts(noise: Option<&NoiseForcing>, lo: f64, hi: f64) -> Vec<f64> {
    noise
        .map(|nf| nf.offsets.iter().map(|(t, _)| *t).filter(|t| *t > lo && *t < hi).collect())
        .unwrap_or_default()
}

/// `x(t1)` given `x(t0) = x0`, exact for the cosine-plus-offset forcing. Works in either time direction.
pub fn propagate_truth(plant: &LtiPlant, t0: f64, t1: f64, x0: &Vector) -> Result<Vector> {
    let n = plant.n();
    let Some(noise) = plant.noise() else {
        return Ok(mat_exp(plant.a(), t1 - t0)? * x0);
    };
    let flow = JointFlow::new(plant, &[], &[]);
    let mut state = Vector::zeros(flow.dim());
    state.rows_mut(0, n).copy_from(x0);
    let mut points = cuts(Some(noise), t0.min(t1), t0.max(t1));
    if t1 < t0 {
        points.reverse();
    }
    points.push(t1);
    let mut t = t0;
    for p in points {
        // The offset on a piece is the value holding at its lower end.
        let lo = t.min(p);
        flow.sync_forcing(&mut state, t);
        state[n + 2] = noise.offset_at(lo);
        let e = mat_exp(&flow.generator(0, 0), p - t)?;
        state = e * state;
        t = p;
    }
    Ok(state.rows(0, n).into_owned())
}

/// Jointly propagates `(x, w_i)` under `ẇ_i = (Ā_i + K_i C̄_i) w_i − K_i C_i x`.
pub fn propagate_local_observer(
    plant: &LtiPlant,
    dec: &ChannelDecomposition,
    k: &Mat,
    t0: f64,
    t1: f64,
    x: &Vector,
    w: &Vector,
) -> Result<(Vector, Vector)> {
    let mut flow = JointFlow::new(plant, std::slice::from_ref(dec), std::slice::from_ref(k));
    let mut state = Vector::zeros(flow.dim());
    flow.set_x(&mut state, x);
    flow.set_w(&mut state, 0, w);
    let mut points = cuts(plant.noise(), t0, t1);
    points.push(t1);
    let mut t = t0;
    for p in points {
        flow.advance(&mut state, t, p - t, 1, 0)?;
        t = p;
    }
    Ok((flow.x(&state), flow.w(&state, 0)))
}
