//! Dense linear-algebra helpers: guarded Cholesky factorizations, QR
//! re-triangularization for square-root filters, block-diagonal assembly.
//!
//! Matrix inverses are never formed explicitly; everything goes through
//! Cholesky or triangular solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{numerical, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// (M + Mᵀ)/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Cholesky of a symmetric PSD matrix after symmetrization, retrying once
/// with a trace-relative jitter before failing.
pub fn chol_psd(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let sym = symmetrize(m);
    if let Some(c) = sym.clone().cholesky() {
        return Ok(c);
    }
    let jitter = 1e-10 * sym.trace().abs();
    if jitter > 0.0 {
        let mut bumped = sym;
        for i in 0..bumped.nrows() {
            bumped[(i, i)] += jitter;
        }
        if let Some(c) = bumped.cholesky() {
            return Ok(c);
        }
    }
    numerical(format!("{what}: {}x{} matrix is not positive definite", m.nrows(), m.ncols()))
}

/// log|M| from its Cholesky factor.
pub fn logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut s = 0.0;
    for i in 0..l.nrows() {
        s += l[(i, i)].ln();
    }
    2.0 * s
}

/// Indices whose diagonal entry is nonzero. A PSD matrix with a zero diagonal
/// entry has the whole row/column zero, so the complement carries no mass.
pub fn active_rows(m: &DMatrix<f64>) -> Vec<usize> {
    (0..m.nrows()).filter(|&i| m[(i, i)] != 0.0).collect()
}

pub fn gather_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

pub fn gather_mat(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn gather_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let cols: Vec<usize> = (0..m.ncols()).collect();
    gather_mat(m, rows, &cols)
}

/// Lower-triangular factor L with L·Lᵀ = M for a PSD matrix that may have
/// exactly-zero rows (masked observation dimensions). The zero rows are left
/// zero in the factor; the nonzero sub-block is factored with [`chol_psd`].
pub fn psd_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let act = active_rows(m);
    if act.len() == n {
        let c = chol_psd(m, what)?;
        return Ok(c.l());
    }
    let mut out = DMatrix::zeros(n, n);
    if !act.is_empty() {
        let sub = gather_mat(m, &act, &act);
        let l = chol_psd(&sub, what)?.l();
        for (bi, &i) in act.iter().enumerate() {
            for (bj, &j) in act.iter().enumerate() {
                out[(i, j)] = l[(bi, bj)];
            }
        }
    }
    Ok(out)
}

/// QR-based triangularization: given a wide pre-array M (p×k, k ≥ p),
/// return lower-triangular L (p×p) with L·Lᵀ = M·Mᵀ. Columns are sign-fixed
/// so the diagonal is nonnegative.
pub fn tria(m: &DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    let r = m.transpose().qr().unpack_r();
    let mut l = DMatrix::zeros(p, p);
    for i in 0..p.min(r.nrows()) {
        for j in 0..p {
            l[(j, i)] = r[(i, j)];
        }
    }
    for j in 0..p {
        if l[(j, j)] < 0.0 {
            for i in 0..p {
                l[(i, j)] = -l[(i, j)];
            }
        }
    }
    l
}

/// Stack blocks into one block-diagonal matrix.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Concatenate block vectors.
pub fn stack_vec(blocks: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(n);
    let mut i0 = 0;
    for b in blocks {
        out.rows_mut(i0, b.len()).copy_from(b);
        i0 += b.len();
    }
    out
}

/// Stack two matrices vertically.
pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), 0), (b.nrows(), b.ncols())).copy_from(b);
    out
}

/// Stack two matrices horizontally.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    out
}

/// Solve X·A = B for X given the Cholesky factorization of A, i.e.
/// X = B·A⁻¹ without forming A⁻¹.
pub fn solve_right(chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> DMatrix<f64> {
    chol.solve(&b.transpose()).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_pd(n: usize, seed: u64) -> DMatrix<f64> {
        let a = crate::rng::RngKey::new(seed).normal_matrix(n, n);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn tria_reproduces_gram() {
        let m = crate::rng::RngKey::new(1).normal_matrix(3, 7);
        let l = tria(&m);
        assert_relative_eq!(&l * l.transpose(), &m * m.transpose(), epsilon = 1e-12);
        for i in 0..3 {
            assert!(l[(i, i)] >= 0.0);
            for j in (i + 1)..3 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn psd_factor_handles_zero_rows() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 0)] = 4.0;
        m[(2, 2)] = 9.0;
        m[(0, 2)] = 1.0;
        m[(2, 0)] = 1.0;
        let l = psd_factor(&m, "test").unwrap();
        assert_relative_eq!(&l * l.transpose(), m, epsilon = 1e-12);
        assert_eq!(l.row(1).iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn chol_psd_jitters_semidefinite() {
        // rank-1 PSD matrix; plain Cholesky may fail, the jittered retry must not
        let v = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        assert!(chol_psd(&m, "rank1").is_ok());
        let m = DMatrix::<f64>::zeros(2, 2);
        assert!(chol_psd(&m, "zero").is_err());
    }

    #[test]
    fn block_diag_layout() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 1, &[5.0]);
        let m = block_diag(&[a, b]);
        assert_eq!(m.nrows(), 3);
        assert_eq!(m[(2, 2)], 5.0);
        assert_eq!(m[(0, 2)], 0.0);
    }

    #[test]
    fn solve_right_matches_inverse() {
        let a = random_pd(4, 9);
        let b = crate::rng::RngKey::new(10).normal_matrix(2, 4);
        let c = chol_psd(&a, "a").unwrap();
        let x = solve_right(&c, &b);
        assert_relative_eq!(&x * &a, b, epsilon = 1e-9);
    }
}
