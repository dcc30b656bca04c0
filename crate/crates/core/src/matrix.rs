//! Dense matrix primitives: exponentials, norms, kernels and the block
//! ("mixed") norm used throughout the contraction analysis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-9;

/// `e^{M t}`.
pub fn mat_exp(m: &Mat, t: f64) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !t.is_finite() {
        return Err(Error::Precondition(format!("non-finite time {t}")));
    }
    if m.nrows() == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    Ok((m * t).exp())
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // Cheap exits for the structured cases that dominate the hot loops.
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.singular_values().max()
}

/// Singular values of `m`, descending.
fn singular_values_desc(m: &Mat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank with the crate-wide relative tolerance.
pub fn rank(m: &Mat) -> usize {
    let sv = singular_values_desc(m);
    let Some(&max) = sv.first() else { return 0 };
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s >= RANK_TOL * max).count()
}

/// Full right-singular basis of `m` (columns of V) together with the rank.
fn right_singular_split(m: &Mat) -> (Mat, usize) {
    let cols = m.ncols();
    if cols == 0 {
        return (Mat::zeros(0, 0), 0);
    }
    // A thin SVD of a wide matrix only returns min(r, c) right vectors, so pad
    // with zero rows to get the full orthogonal V.
    let padded = if m.nrows() < cols {
        let mut p = Mat::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv = svd.singular_values;
    let max = sv.max();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]));
    let r = if max == 0.0 {
        0
    } else {
        order.iter().filter(|&&k| sv[k] >= RANK_TOL * max).count()
    };
    let mut v = Mat::zeros(cols, order.len());
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &v_t.row(src).transpose());
    }
    (v, r)
}

/// Orthonormal basis of `ker m`, one vector per column.
pub fn kernel_basis(m: &Mat) -> Mat {
    let (v, r) = right_singular_split(m);
    v.columns(r, v.ncols() - r).into_owned()
}

/// Orthonormal basis of the row space of `m`, one vector per row.
pub fn row_space_basis(m: &Mat) -> Mat {
    let (v, r) = right_singular_split(m);
    v.columns(0, r).transpose()
}

/// Block-diagonal matrix with the given blocks (blocks may be rectangular).
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Block-partitioned matrix with uniform `n x p` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMat {
    block_rows: usize,
    block_cols: usize,
    n: usize,
    p: usize,
    blocks: Vec<Mat>,
}

impl BlockMat {
    /// Builds a block matrix from row-major blocks, all of which must share one shape.
    pub fn from_blocks(block_rows: usize, block_cols: usize, blocks: Vec<Mat>) -> Result<Self> {
        if blocks.len() != block_rows * block_cols || blocks.is_empty() {
            return Err(Error::Dimension(format!(
                "expected {} blocks, got {}",
                block_rows * block_cols,
                blocks.len()
            )));
        }
        let (n, p) = blocks[0].shape();
        if blocks.iter().any(|b| b.shape() != (n, p)) {
            return Err(Error::Dimension("blocks have differing shapes".into()));
        }
        Ok(Self { block_rows, block_cols, n, p, blocks })
    }

    /// Splits a dense matrix into `n x p` blocks.
    pub fn from_dense(dense: &Mat, n: usize, p: usize) -> Result<Self> {
        if n == 0 || p == 0 || !dense.nrows().is_multiple_of(n) || !dense.ncols().is_multiple_of(p) {
            return Err(Error::Dimension(format!(
                "{}x{} matrix cannot be tiled by {n}x{p} blocks",
                dense.nrows(),
                dense.ncols()
            )));
        }
        let (br, bc) = (dense.nrows() / n, dense.ncols() / p);
        let blocks = (0..br)
            .flat_map(|i| (0..bc).map(move |j| (i, j)))
            .map(|(i, j)| dense.view((i * n, j * p), (n, p)).into_owned())
            .collect();
        Self::from_blocks(br, bc, blocks)
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    pub fn block_cols(&self) -> usize {
        self.block_cols
    }

    pub fn block_shape(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    pub fn block(&self, i: usize, j: usize) -> &Mat {
        &self.blocks[i * self.block_cols + j]
    }

    pub fn to_dense(&self) -> Mat {
        let mut out = Mat::zeros(self.block_rows * self.n, self.block_cols * self.p);
        for i in 0..self.block_rows {
            for j in 0..self.block_cols {
                out.view_mut((i * self.n, j * self.p), (self.n, self.p))
                    .copy_from(self.block(i, j));
            }
        }
        out
    }

    /// Block product `self * rhs`.
    pub fn mul(&self, rhs: &BlockMat) -> Result<BlockMat> {
        if self.block_cols != rhs.block_rows || self.p != rhs.n {
            return Err(Error::Dimension("non-conformable block matrices".into()));
        }
        let mut blocks = Vec::with_capacity(self.block_rows * rhs.block_cols);
        for i in 0..self.block_rows {
            for j in 0..rhs.block_cols {
                let mut acc = Mat::zeros(self.n, rhs.p);
                for k in 0..self.block_cols {
                    acc += self.block(i, k) * rhs.block(k, j);
                }
                blocks.push(acc);
            }
        }
        BlockMat::from_blocks(self.block_rows, rhs.block_cols, blocks)
    }
}

/// Infinity norm of the matrix of blockwise two-norms.
pub fn mixed_norm(b: &BlockMat) -> f64 {
    (0..b.block_rows)
        .map(|i| (0..b.block_cols).map(|j| spectral_norm(b.block(i, j))).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Mixed norm of a dense matrix read as `n x p` blocks.
pub fn mixed_norm_dense(dense: &Mat, n: usize, p: usize) -> f64 {
    let br = dense.nrows() / n;
    let bc = dense.ncols() / p;
    (0..br)
        .map(|i| {
            (0..bc)
                .map(|j| spectral_norm(&dense.view((i * n, j * p), (n, p)).into_owned()))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Mixed norm with explicit (possibly uneven) row and column partitions.
pub fn mixed_norm_partitioned(dense: &Mat, row_sizes: &[usize], col_sizes: &[usize]) -> f64 {
    let mut best: f64 = 0.0;
    let mut r = 0;
    for &h in row_sizes {
        let mut c = 0;
        let mut sum = 0.0;
        for &w in col_sizes {
            sum += spectral_norm(&dense.view((r, c), (h, w)).into_owned());
            c += w;
        }
        best = best.max(sum);
        r += h;
    }
    best
}

/// Mixed norm of a stacked vector: the largest block 2-norm.
pub fn block_vector_norm(v: &Vector, sizes: &[usize]) -> f64 {
    let mut r = 0;
    sizes
        .iter()
        .map(|&h| {
            let x = v.rows(r, h).norm();
            r += h;
            x
        })
        .fold(0.0, f64::max)
}

/// `S ⊗ I_n` as a block matrix.
pub fn kron_identity(s: &Mat, n: usize) -> BlockMat {
    let (r, c) = s.shape();
    let blocks = (0..r)
        .flat_map(|i| (0..c).map(move |j| (i, j)))
        .map(|(i, j)| Mat::identity(n, n) * s[(i, j)])
        .collect();
    BlockMat::from_blocks(r, c, blocks).expect("uniform identity blocks")
}

/// Dense `S ⊗ I_n`.
pub fn kron_identity_dense(s: &Mat, n: usize) -> Mat {
    s.kronecker(&Mat::identity(n, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&Mat::zeros(2, 2), 7.3).unwrap();
        assert_eq!(e, Mat::identity(2, 2));
    }

    #[test]
    fn exp_of_diagonal() {
        let d = Mat::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0]));
        let e = mat_exp(&d, 1.0).unwrap();
        assert_close(e[(0, 0)], (-1.0f64).exp(), 1e-14);
        assert_close(e[(1, 1)], (-2.0f64).exp(), 1e-14);
        assert_close(e[(0, 1)], 0.0, 1e-15);
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(matches!(mat_exp(&Mat::zeros(2, 3), 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn spectral_norm_basics() {
        assert_close(spectral_norm(&Mat::identity(3, 3)), 1.0, 1e-14);
        let d = Mat::from_diagonal(&Vector::from_vec(vec![3.0, -5.0]));
        assert_close(spectral_norm(&d), 5.0, 1e-13);
    }

    #[test]
    fn kernel_of_identity_and_zero() {
        assert_eq!(kernel_basis(&Mat::identity(2, 2)).ncols(), 0);
        let k = kernel_basis(&Mat::zeros(2, 2));
        assert_eq!(k.ncols(), 2);
        assert!((k.transpose() * &k - Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn kernel_of_wide_matrix() {
        let m = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let k = kernel_basis(&m);
        assert_eq!(k.ncols(), 2);
        assert!((&m * &k).norm() < 1e-12);
        assert_eq!(row_space_basis(&m).nrows(), 1);
    }

    #[test]
    fn mixed_norm_of_single_block() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = BlockMat::from_blocks(1, 1, vec![m.clone()]).unwrap();
        assert_close(mixed_norm(&b), spectral_norm(&m), 1e-14);
    }

    #[test]
    fn kron_identity_shapes() {
        let b = kron_identity(&Mat::identity(3, 3), 2);
        assert_eq!(b.to_dense(), Mat::identity(6, 6));
        let c = kron_identity(&Mat::from_element(1, 1, 2.5), 3);
        assert_eq!(c.to_dense(), Mat::identity(3, 3) * 2.5);
        assert_eq!(kron_identity_dense(&Mat::identity(3, 3), 2), Mat::identity(6, 6));
    }

    #[test]
    fn stochastic_kron_preserves_consensus() {
        let f = Mat::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let v = [1.5, -2.0];
        let stacked = Vector::from_iterator(6, (0..3).flat_map(|_| v));
        let out = kron_identity(&f, 2).to_dense() * &stacked;
        assert!((out - stacked).norm() < 1e-14);
        assert_close(mixed_norm(&kron_identity(&f, 2)), 1.0, 1e-14);
    }
}
