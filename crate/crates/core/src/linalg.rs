//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};

/// Machine-epsilon scale used by the numerical-rank rule.
pub const RANK_EPS: f64 = f64::EPSILON;

/// Singular values below `max(rows, cols) * sigma_max * 2^-52` count as zero.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * RANK_EPS
}

/// Numerical rank of `m` under [`rank_tolerance`].
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_tolerance(m.nrows(), m.ncols(), smax);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Moore-Penrose pseudoinverse; singular values at or below `rtol * sigma_max` are dropped.
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut out = DMatrix::zeros(c, r);
    if smax == 0.0 {
        return out;
    }
    let cut = rtol * smax;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            let vk = vt.row(k).transpose();
            let uk = u.column(k).transpose();
            out += (vk * uk) / s;
        }
    }
    out
}

/// Pseudoinverse of a symmetric matrix via its eigendecomposition.
///
/// Eigenvalues at or below `cutoff` are dropped; the orthogonal projector onto
/// their eigenspace is returned alongside.
pub fn symmetric_pinv(m: &DMatrix<f64>, cutoff: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut inv = DMatrix::zeros(n, n);
    let mut kernel = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        if lam > cutoff && lam > 0.0 {
            inv += (v * v.transpose()) / lam;
        } else {
            kernel += v * v.transpose();
        }
    }
    (inv, kernel)
}

/// Block-diagonal `I_blocks ⊗ w`.
pub fn block_diag_repeat(w: &DMatrix<f64>, blocks: usize) -> DMatrix<f64> {
    let (r, c) = w.shape();
    let mut out = DMatrix::zeros(r * blocks, c * blocks);
    for b in 0..blocks {
        out.view_mut((b * r, b * c), (r, c)).copy_from(w);
    }
    out
}

/// Vertical concatenation.
pub fn vstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        debug_assert_eq!(p.ncols(), cols);
        out.view_mut((r0, 0), (p.nrows(), cols)).copy_from(p);
        r0 += p.nrows();
    }
    out
}

/// Stack the rows of a `T × n` trajectory into a time-major vector of length `T·n`.
pub fn stack_rows(traj: &DMatrix<f64>) -> DVector<f64> {
    let (t, n) = traj.shape();
    DVector::from_fn(t * n, |i, _| traj[(i / n, i % n)])
}

/// Inverse of [`stack_rows`].
pub fn unstack_rows(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let t = v.len().checked_div(n).unwrap_or(0);
    DMatrix::from_fn(t, n, |r, c| v[r * n + c])
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_rank_deficient() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&m, 1e-12);
        assert_relative_eq!(p, DMatrix::from_element(2, 2, 0.25), epsilon = 1e-14);
        let (sp, ker) = symmetric_pinv(&m, 1e-12);
        assert_relative_eq!(sp, p, epsilon = 1e-14);
        assert_relative_eq!(ker, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]), epsilon = 1e-14);
    }

    #[test]
    fn stacking_round_trip() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = stack_rows(&m);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unstack_rows(&v, 2), m);
    }

    #[test]
    fn rank_of_zero_and_identity() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 4)), 0);
        assert_eq!(numerical_rank(&DMatrix::identity(3, 4)), 3);
    }
}
