//! Decay-rate measurement and the explicit error bounds.

use crate::error::{Error, Result};
use crate::sim::SimTrace;

/// How the stacked error `e(s)` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorNorm {
    /// Largest agent error 2-norm (the block mixed norm).
    Mixed,
    /// 2-norm of the stacked error.
    Euclidean,
}

impl ErrorNorm {
    pub fn combine(self, parts: impl Iterator<Item = f64>) -> f64 {
        match self {
            ErrorNorm::Mixed => parts.fold(0.0, f64::max),
            ErrorNorm::Euclidean => parts.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// `(sT, |e(s)|)` over the agents that took part in each event, optionally restricted to `agents`.
pub fn event_error_norms(trace: &SimTrace, norm: ErrorNorm, agents: Option<&[usize]>) -> Vec<(f64, f64)> {
    trace
        .events
        .iter()
        .map(|r| {
            let parts = r
                .errors
                .iter()
                .enumerate()
                .filter(|(i, _)| agents.is_none_or(|a| a.contains(i)))
                .filter_map(|(_, e)| e.as_ref().map(|v| v.norm()));
            (r.time, norm.combine(parts))
        })
        .collect()
}

/// Errors below this fraction of the peak are rounding noise and are not fitted.
pub const RESOLUTION_FLOOR: f64 = 1e-10;

/// Least-squares decay rate of `log |e|` against time over the trailing
/// `tail_fraction` of the resolvable prefix; positive means decaying.
pub fn measure_decay(points: &[(f64, f64)], tail_fraction: f64) -> Result<f64> {
    if points.len() < 10 {
        return Err(Error::Measurement(format!("need at least 10 events, got {}", points.len())));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Measurement(format!("tail fraction {tail_fraction} outside (0, 1]")));
    }
    let peak = points.iter().map(|p| p.1).fold(0.0, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Measurement("errors are zero or non-finite".into()));
    }
    let usable = points.iter().position(|p| !(p.1 > RESOLUTION_FLOOR * peak)).unwrap_or(points.len());
    let window = &points[..usable];
    let take = ((window.len() as f64) * tail_fraction).round().max(3.0) as usize;
    if window.len() < 3 || take > window.len() {
        return Err(Error::Measurement(format!(
            "only {} events above the resolution floor; cannot fit a rate",
            window.len()
        )));
    }
    let tail = &window[window.len() - take..];
    if tail.iter().any(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return Err(Error::Measurement("zero or non-finite error in the fit window".into()));
    }
    let k = tail.len() as f64;
    let mean_t = tail.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = tail.iter().map(|p| p.1.ln()).sum::<f64>() / k;
    let sxy: f64 = tail.iter().map(|p| (p.0 - mean_t) * (p.1.ln() - mean_y)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - mean_t).powi(2)).sum();
    Ok(-sxy / sxx)
}

/// `e^{−λsT}(|e(0)| + d|ē(0)|)`.
pub fn theorem_bound(s: usize, lambda: f64, period: f64, e0: f64, ebar0: f64, d: f64) -> f64 {
    (-lambda * s as f64 * period).exp() * (e0 + d * ebar0)
}

/// Theorem bound plus `εg Σ_{k=1}^{s} e^{−λ(s−k)T} ||x((k−1)T)||`; `xnorms[k]` is `||x(kT)||`.
#[allow(clippy::too_many_arguments)]
pub fn mismatch_bound(
    s: usize,
    lambda: f64,
    period: f64,
    e0: f64,
    ebar0: f64,
    d: f64,
    eps_g: f64,
    xnorms: &[f64],
) -> f64 {
    let forced: f64 = (1..=s).map(|k| (-lambda * (s - k) as f64 * period).exp() * xnorms[k - 1]).sum();
    theorem_bound(s, lambda, period, e0, ebar0, d) + eps_g * forced
}
