//! Block-Hankel data matrices, persistency of excitation, and the past/future split.

use nalgebra::DMatrix;

use crate::error::{invalid, mismatch, Result};
use crate::linalg::{numerical_rank, vstack};

/// Depth-`depth` block-Hankel matrix of a `T × n_w` signal.
///
/// Column `k` stacks `w_k, …, w_{k+depth−1}`; the result is `(depth·n_w) × (T−depth+1)`.
pub fn build_hankel(w: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    let (t_len, nw) = w.shape();
    if depth == 0 || depth > t_len {
        return Err(invalid(alloc::format!(
            "Hankel depth {depth} must lie in 1..={t_len}"
        )));
    }
    let cols = t_len - depth + 1;
    Ok(DMatrix::from_fn(depth * nw, cols, |r, k| w[(k + r / nw, r % nw)]))
}

/// Outcome of a persistency-of-excitation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExcitationCheck {
    pub persistently_exciting: bool,
    pub rank: usize,
    pub required_rank: usize,
}

/// `w` is persistently exciting of order `order` iff its depth-`order` Hankel has full row rank.
pub fn is_persistently_exciting(w: &DMatrix<f64>, order: usize) -> Result<ExcitationCheck> {
    let h = build_hankel(w, order)?;
    let rank = numerical_rank(&h);
    let required_rank = w.ncols() * order;
    Ok(ExcitationCheck {
        persistently_exciting: rank == required_rank,
        rank,
        required_rank,
    })
}

/// Minimum trajectory length `(n_u + 1)(T_ini + N + n_x)` for a PE input of the needed order.
pub fn minimum_data_length(n_u: usize, n_x: usize, t_ini: usize, horizon: usize) -> usize {
    (n_u + 1) * (t_ini + horizon + n_x)
}

/// Past/future partition of the depth-`T_ini + N` input and output Hankels.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlocks {
    pub u_p: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    pub t_ini: usize,
    pub horizon: usize,
}

impl HankelBlocks {
    /// Column count `m = T − (T_ini + N) + 1`, the dimension of `g`.
    pub fn columns(&self) -> usize {
        self.u_p.ncols()
    }
    pub fn n_u(&self) -> usize {
        self.u_p.nrows() / self.t_ini
    }
    pub fn n_y(&self) -> usize {
        self.y_p.nrows() / self.t_ini
    }
    pub fn depth(&self) -> usize {
        self.t_ini + self.horizon
    }
    /// `[U_P; Y_P; U_F; Y_F]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        vstack(&[&self.u_p, &self.y_p, &self.u_f, &self.y_f])
    }

    /// Same input blocks, output blocks rebuilt from another output record.
    pub fn with_outputs(&self, u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        partition(u, y, self.t_ini, self.horizon)
    }
}

/// Split depth-`T_ini + N` Hankels of `u` and `y` into the first `T_ini` and last `N` block rows.
pub fn partition(u: &DMatrix<f64>, y: &DMatrix<f64>, t_ini: usize, horizon: usize) -> Result<HankelBlocks> {
    if u.nrows() != y.nrows() {
        return Err(mismatch("trajectory length", u.nrows(), y.nrows()));
    }
    if t_ini == 0 || horizon == 0 {
        return Err(invalid("T_ini and N must be at least 1"));
    }
    let depth = t_ini + horizon;
    if u.nrows() < depth {
        return Err(invalid(alloc::format!(
            "trajectory length {} is shorter than T_ini + N = {depth}",
            u.nrows()
        )));
    }
    let (nu, ny) = (u.ncols(), y.ncols());
    let hu = build_hankel(u, depth)?;
    let hy = build_hankel(y, depth)?;
    if hu.ncols() < nu * depth {
        log::warn!(
            "{} Hankel columns cannot span input order {depth}; the data are too short",
            hu.ncols()
        );
    }
    Ok(HankelBlocks {
        u_p: hu.rows(0, t_ini * nu).into_owned(),
        u_f: hu.rows(t_ini * nu, horizon * nu).into_owned(),
        y_p: hy.rows(0, t_ini * ny).into_owned(),
        y_f: hy.rows(t_ini * ny, horizon * ny).into_owned(),
        t_ini,
        horizon,
    })
}
