//! The multi-channel plant and each agent's observable decomposition.

use crate::error::{Error, Result};
use crate::matrix::{kernel_basis, rank, row_space_basis, spectral_norm, Mat, Vector};

/// Scalar forcing `ν(t) = amplitude·cos(ωt) + offset(t)` entering through `b`.
///
/// `offsets` is a list of `(time, value)` breakpoints; the offset is zero before
/// the first breakpoint and holds each value until the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseForcing {
    pub b: Vector,
    pub amplitude: f64,
    pub omega: f64,
    pub offsets: Vec<(f64, f64)>,
}

impl NoiseForcing {
    pub fn cosine(b: Vector, amplitude: f64, omega: f64) -> Self {
        Self { b, amplitude, omega, offsets: Vec::new() }
    }

    /// Piecewise-constant part of the forcing at `t`.
    pub fn offset_at(&self, t: f64) -> f64 {
        self.offsets
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .map_or(0.0, |(_, v)| *v)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t).cos() + self.offset_at(t)
    }
}

/// `ẋ = Ax (+ bν)`, `y_i = C_i x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: Mat,
    channels: Vec<Mat>,
    x0: Vector,
    noise: Option<NoiseForcing>,
}

impl LtiPlant {
    /// Validates dimensions, rejects zero channels and requires joint observability.
    pub fn new(a: Mat, channels: Vec<Mat>, x0: Vector, noise: Option<NoiseForcing>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {:?}", a.shape())));
        }
        if channels.is_empty() {
            return Err(Error::Precondition("plant needs at least one channel".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.ncols() != n || c.nrows() == 0 {
                return Err(Error::Dimension(format!(
                    "C_{} is {}x{}, expected s x {n}",
                    i + 1,
                    c.nrows(),
                    c.ncols()
                )));
            }
            if c.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidChannel { agent: i + 1, reason: "C_i = 0".into() });
            }
        }
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
        }
        if let Some(noise) = &noise {
            if noise.b.len() != n {
                return Err(Error::Dimension(format!("noise b has length {}, expected {n}", noise.b.len())));
            }
        }
        let all_finite = a.iter().chain(channels.iter().flat_map(|c| c.iter())).chain(x0.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Precondition("plant data contains non-finite entries".into()));
        }
        let plant = Self { a, channels, x0, noise };
        let all: Vec<usize> = (0..plant.agents()).collect();
        let r = rank(&plant.stacked_observability(&all));
        if r < n {
            return Err(Error::NotJointlyObservable { rank: r, n });
        }
        Ok(plant)
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn channel(&self, i: usize) -> &Mat {
        &self.channels[i]
    }

    pub fn channels(&self) -> &[Mat] {
        &self.channels
    }

    pub fn x0(&self) -> &Vector {
        &self.x0
    }

    pub fn noise(&self) -> Option<&NoiseForcing> {
        self.noise.as_ref()
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Number of channels (agents).
    pub fn agents(&self) -> usize {
        self.channels.len()
    }

    pub fn with_a(&self, a: Mat) -> Result<Self> {
        Self::new(a, self.channels.clone(), self.x0.clone(), self.noise.clone())
    }

    fn stacked_observability(&self, subset: &[usize]) -> Mat {
        let blocks: Vec<Mat> = subset
            .iter()
            .map(|&i| observability_matrix(&self.channels[i], &self.a).expect("validated dimensions"))
            .collect();
        let rows = blocks.iter().map(|b| b.nrows()).sum();
        let mut out = Mat::zeros(rows, self.n());
        let mut r = 0;
        for b in &blocks {
            out.view_mut((r, 0), b.shape()).copy_from(b);
            r += b.nrows();
        }
        out
    }
}

/// `col{C, CA, ..., CA^{n-1}}`.
pub fn observability_matrix(c: &Mat, a: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if !a.is_square() || c.ncols() != n {
        return Err(Error::Dimension(format!(
            "observability matrix needs C (s x n) and A (n x n), got {:?} and {:?}",
            c.shape(),
            a.shape()
        )));
    }
    let s = c.nrows();
    let mut out = Mat::zeros(s * n, n);
    let mut block = c.clone();
    for k in 0..n {
        out.view_mut((k * s, 0), (s, n)).copy_from(&block);
        block = &block * a;
    }
    Ok(out)
}

/// True iff the channels in `subset` (0-based) jointly observe the state.
pub fn check_joint_observability(plant: &LtiPlant, subset: &[usize]) -> Result<bool> {
    if subset.is_empty() {
        return Err(Error::Precondition("agent subset must be non-empty".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= plant.agents()) {
        return Err(Error::Precondition(format!("agent index {} out of range", bad + 1)));
    }
    Ok(rank(&plant.stacked_observability(subset)) == plant.n())
}

/// Agent `i`'s view of the plant: `w_i` estimates `L_i x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDecomposition {
    pub agent: usize,
    /// `n_i x n`, full row rank, `ker L_i = ker O(C_i, A)`.
    pub l: Mat,
    /// Solves `L_i A = Ā_i L_i`.
    pub abar: Mat,
    /// Solves `C_i = C̄_i L_i`.
    pub cbar: Mat,
    /// `L_i'(L_i L_i')^{-1}`.
    pub q: Mat,
    /// Orthogonal projection onto the unobservable space of `(C_i, A)`.
    pub p: Mat,
}

impl ChannelDecomposition {
    pub fn observable_dim(&self) -> usize {
        self.l.nrows()
    }
}

const RESIDUAL_TOL: f64 = 1e-8;

/// Canonical decomposition: `L_i` has orthonormal rows spanning the observable row space.
pub fn decompose_channel(plant: &LtiPlant, i: usize) -> Result<ChannelDecomposition> {
    decompose_channel_with(plant, i, None)
}

/// Like [`decompose_channel`], but accepts a user-chosen `L_i` after checking its kernel.
pub fn decompose_channel_with(plant: &LtiPlant, i: usize, l_override: Option<&Mat>) -> Result<ChannelDecomposition> {
    if i >= plant.agents() {
        return Err(Error::Precondition(format!("agent index {} out of range", i + 1)));
    }
    let a = plant.a();
    let c = plant.channel(i);
    let n = plant.n();
    let obs = observability_matrix(c, a)?;
    let invalid = |reason: String| Error::InvalidChannel { agent: i + 1, reason };

    let l = match l_override {
        None => row_space_basis(&obs),
        Some(l) => {
            if l.ncols() != n {
                return Err(invalid(format!("L_i has {} columns, expected {n}", l.ncols())));
            }
            let expected = rank(&obs);
            if rank(l) != l.nrows() || l.nrows() != expected {
                return Err(invalid(format!(
                    "L_i must be full row rank with {expected} rows (observable dimension)"
                )));
            }
            let ker = kernel_basis(&obs);
            if ker.ncols() > 0 && (l * &ker).norm() > RESIDUAL_TOL * l.norm().max(1.0) {
                return Err(invalid("ker L_i differs from the unobservable space of (C_i, A)".into()));
            }
            l.clone()
        }
    };
    if l.nrows() == 0 {
        return Err(invalid("channel observes nothing".into()));
    }

    let gram = &l * l.transpose();
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Internal(format!("L_{} L_{}' is singular", i + 1, i + 1)))?;
    let q = l.transpose() * gram_inv;
    let abar = &l * a * &q;
    let cbar = c * &q;
    let p = Mat::identity(n, n) - &q * &l;

    let scale_a = spectral_norm(a).max(1.0);
    let scale_c = spectral_norm(c).max(1.0);
    let res_a = (&l * a - &abar * &l).norm();
    let res_c = (c - &cbar * &l).norm();
    if res_a > RESIDUAL_TOL * scale_a || res_c > RESIDUAL_TOL * scale_c {
        return Err(Error::Internal(format!(
            "decomposition residuals too large for agent {}: |LA - ĀL| = {res_a:e}, |C - C̄L| = {res_c:e}",
            i + 1
        )));
    }
    if rank(&observability_matrix(&cbar, &abar)?) != l.nrows() {
        return Err(Error::Internal(format!("(C̄_{0}, Ā_{0}) is not observable", i + 1)));
    }
    Ok(ChannelDecomposition { agent: i, l, abar, cbar, q, p })
}

/// Decomposes every channel, honouring per-agent overrides of `L_i`.
pub fn decompose_all(plant: &LtiPlant, overrides: &[Option<Mat>]) -> Result<Vec<ChannelDecomposition>> {
    (0..plant.agents())
        .map(|i| decompose_channel_with(plant, i, overrides.get(i).and_then(|o| o.as_ref())))
        .collect()
}
