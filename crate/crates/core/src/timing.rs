//! Event and iteration timing: event periods, per-agent iteration instants,
//! broadcast offsets and the seeded local deviations.

use crate::error::{Error, Result};

/// How the agents' clocks relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Shared event times, no iteration jitter (`ε_i = 0`).
    Sync,
    /// Shared event times, iteration instants jittered by up to `ε_i`.
    Async,
    /// Per-agent event-clock offsets `t_i0`, no iteration jitter.
    Mismatch,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
            Mode::Mismatch => "mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingConfig {
    /// Event period `T`.
    pub period: f64,
    /// Nominal iteration spacing `Δ`.
    pub delta: f64,
    /// Broadcast offset `β`.
    pub beta: f64,
    /// Iterations per event interval.
    pub q: usize,
    /// Deviation bounds `ε_i`.
    pub epsilons: Vec<f64>,
    /// Key for the deviation draws.
    pub seed: u64,
    /// Event-clock offsets `t_i0` (mismatch mode only; zero otherwise).
    pub start_offsets: Vec<f64>,
}

impl TimingConfig {
    /// Zero-jitter timing with `Δ = T/(q+1)` and `β = Δ/2`.
    pub fn synchronous(m: usize, period: f64, q: usize) -> Self {
        let delta = period / (q as f64 + 1.0);
        Self {
            period,
            delta,
            beta: 0.5 * delta,
            q,
            epsilons: vec![0.0; m],
            seed: 0,
            start_offsets: vec![0.0; m],
        }
    }

    pub fn agents(&self) -> usize {
        self.epsilons.len()
    }

    /// `ε = max ε_i`.
    pub fn max_epsilon(&self) -> f64 {
        self.epsilons.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        let m = self.agents();
        let bad = |msg: String| Err(Error::Timing(msg));
        if !(self.period > 0.0 && self.period.is_finite()) {
            return bad(format!("event period T = {} must be positive", self.period));
        }
        if self.q == 0 {
            return bad("q must be at least 1".into());
        }
        if !(self.delta > 0.0) {
            return bad(format!("iteration spacing Δ = {} must be positive", self.delta));
        }
        if !(self.beta >= 0.0 && self.beta < self.delta) {
            return bad(format!("broadcast offset β = {} must satisfy 0 ≤ β < Δ = {}", self.beta, self.delta));
        }
        if self.start_offsets.len() != m {
            return bad(format!("{} start offsets for {m} agents", self.start_offsets.len()));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0)) {
            return bad("deviation bounds ε_i must be nonnegative".into());
        }
        let eps = self.max_epsilon();
        if self.delta * self.q as f64 + eps > self.period * (1.0 + 1e-12) {
            return bad(format!(
                "Δq + max ε = {} exceeds the event period T = {}",
                self.delta * self.q as f64 + eps,
                self.period
            ));
        }
        match mode {
            Mode::Sync => {
                if eps != 0.0 {
                    return bad("synchronous operation requires every ε_i = 0".into());
                }
                if self.start_offsets.iter().any(|t| *t != 0.0) {
                    return bad("synchronous operation requires every t_i0 = 0".into());
                }
            }
            Mode::Async => {
                if self.start_offsets.iter().any(|t| *t != 0.0) {
                    return bad("asynchronous operation requires every t_i0 = 0".into());
                }
                for (i, ei) in self.epsilons.iter().enumerate() {
                    for (j, ej) in self.epsilons.iter().enumerate() {
                        if ei + ej > self.beta {
                            return bad(format!("ε_{} + ε_{} = {} exceeds β = {}", i + 1, j + 1, ei + ej, self.beta));
                        }
                        if ei + ej + self.beta >= self.delta {
                            return bad(format!(
                                "ε_{} + ε_{} + β = {} is not below Δ = {}",
                                i + 1,
                                j + 1,
                                ei + ej + self.beta,
                                self.delta
                            ));
                        }
                    }
                }
            }
            Mode::Mismatch => {
                for (i, (t0, e)) in self.start_offsets.iter().zip(&self.epsilons).enumerate() {
                    if t0.abs() > *e {
                        return bad(format!("|t_{}0| = {} exceeds ε_{} = {e}", i + 1, t0.abs(), i + 1));
                    }
                }
                if 2.0 * eps >= self.period {
                    return bad(format!("event clocks drift apart by up to 2ε = {} ≥ T", 2.0 * eps));
                }
            }
        }
        Ok(())
    }

    /// `t_{i(s-1)}`: start of agent `i`'s `s`-th event interval (`s ≥ 1`).
    pub fn event_start(&self, mode: Mode, i: usize, s: usize) -> f64 {
        let base = (s as f64 - 1.0) * self.period;
        match mode {
            Mode::Mismatch => self.start_offsets[i] + base,
            _ => base,
        }
    }

    /// `δ_is(k)`: uniform on `[−ε_i, ε_i]` in asynchronous mode, zero otherwise.
    pub fn deviation(&self, mode: Mode, i: usize, s: usize, k: usize) -> f64 {
        match mode {
            Mode::Async if self.epsilons[i] > 0.0 => {
                let u = keyed_uniform(self.seed, i as u64, s as u64, k as u64);
                self.epsilons[i] * (2.0 * u - 1.0)
            }
            _ => 0.0,
        }
    }

    /// `τ_is(k) = t_{i(s-1)} + kΔ + δ_is(k)`.
    pub fn iteration_time(&self, mode: Mode, i: usize, s: usize, k: usize) -> f64 {
        self.event_start(mode, i, s) + k as f64 * self.delta + self.deviation(mode, i, s, k)
    }

    /// Instant at which agent `j` broadcasts its round-`k-1` iterate during event `s`.
    pub fn broadcast_time(&self, mode: Mode, j: usize, s: usize, k: usize) -> f64 {
        self.iteration_time(mode, j, s, k - 1) + self.beta
    }

    /// `I_s(k) = [−ε + sT + (k−1)Δ + β, ε + sT + (k−1)Δ + β]`.
    pub fn window(&self, s: usize, k: usize) -> (f64, f64) {
        let centre = s as f64 * self.period + (k as f64 - 1.0) * self.delta + self.beta;
        let eps = self.max_epsilon();
        (centre - eps, centre + eps)
    }
}

/// `τ_is(k)` for `k = 0..=q`.
pub fn iteration_schedule(timing: &TimingConfig, mode: Mode, i: usize, s: usize) -> Result<Vec<f64>> {
    timing.validate(mode)?;
    if i >= timing.agents() || s == 0 {
        return Err(Error::Precondition(format!("no iteration schedule for agent {} event {s}", i + 1)));
    }
    Ok((0..=timing.q).map(|k| timing.iteration_time(mode, i, s, k)).collect())
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based uniform draw on `[0, 1)` keyed by `(seed, agent, event, iteration)`.
///
/// Each key component is folded through SplitMix64 so draws are independent of
/// the order in which they are requested.
pub fn keyed_uniform(seed: u64, agent: u64, event: u64, iteration: u64) -> f64 {
    const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut h = mix64(seed.wrapping_add(GAMMA));
    for part in [agent, event, iteration] {
        h = mix64(h ^ part.wrapping_mul(GAMMA).wrapping_add(GAMMA));
    }
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
