//! Dense convex QP: `minimize ½ gᵀHg + fᵀg` subject to `A_eq g = b_eq`, `A_in g ≤ b_in`.
//!
//! Equality-constrained problems are solved in the null space of `A_eq` with
//! pseudoinverses, which yields the minimum-norm minimizer when `H` is only
//! semidefinite on that null space. Inequalities are handled by a primal
//! active-set method started from a feasible point found by a phase-1 problem.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{inf_norm, pinv, symmetric_pinv, vstack};

#[derive(Debug, Clone, PartialEq)]
pub struct Qp {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl Qp {
    /// Unconstrained problem in `n` variables.
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.ineq_matrix = a;
        self.ineq_rhs = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, g: &DVector<f64>) -> f64 {
        0.5 * g.dot(&(&self.hessian * g)) + self.linear.dot(g)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) {
            return Err(mismatch("QP Hessian", alloc::format!("{n}x{n}"), alloc::format!("{:?}", self.hessian.shape())));
        }
        if self.eq_matrix.ncols() != n || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(invalid("equality block has inconsistent dimensions"));
        }
        if self.ineq_matrix.ncols() != n || self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(invalid("inequality block has inconsistent dimensions"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub stationarity_tol: f64,
    pub feasibility_tol: f64,
    pub complementarity_tol: f64,
    /// Relative cutoff for pseudoinverse singular values.
    pub pinv_rtol: f64,
    /// Active-set iterations allowed per variable.
    pub iteration_factor: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            stationarity_tol: 1e-8,
            feasibility_tol: 1e-8,
            complementarity_tol: 1e-8,
            pinv_rtol: 1e-10,
            iteration_factor: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    /// The objective decreases without bound along a feasible ray.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub g: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    /// Inequality rows held as equalities at termination.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

/// Precomputed null-space solver for `min ½ gᵀHg + fᵀg  s.t.  E g = b` with fixed `H`, `E`.
#[derive(Debug, Clone)]
pub struct EqualitySolver {
    hessian: DMatrix<f64>,
    constraints: DMatrix<f64>,
    constraints_pinv: DMatrix<f64>,
    /// `P (PHP)⁺ P`.
    reduced_inverse: DMatrix<f64>,
    /// Projector onto the zero-curvature directions inside `null(E)`.
    flat_directions: DMatrix<f64>,
}

/// Result of an equality-constrained solve.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualitySolution {
    pub g: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    pub feasibility: f64,
}

enum Direction {
    Newton(DVector<f64>),
    Ray(DVector<f64>),
}

impl EqualitySolver {
    pub fn new(hessian: &DMatrix<f64>, constraints: &DMatrix<f64>, rtol: f64) -> Self {
        let n = hessian.nrows();
        let constraints_pinv = pinv(constraints, rtol);
        let mut projector = DMatrix::identity(n, n) - &constraints_pinv * constraints;
        projector = (&projector + projector.transpose()) * 0.5;
        let reduced = &projector * hessian * &projector;
        // cutoff scales with H itself: P carries O(eps) noise outside null(E)
        let (inv, kernel) = symmetric_pinv(&reduced, rtol * hessian.amax());
        let reduced_inverse = &projector * inv * &projector;
        let flat_directions = &projector * kernel * &projector;
        Self {
            hessian: hessian.clone(),
            constraints: constraints.clone(),
            constraints_pinv,
            reduced_inverse,
            flat_directions,
        }
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.nrows()
    }

    /// Minimum-norm minimizer for the given linear term and right-hand side.
    pub fn solve(&self, linear: &DVector<f64>, rhs: &DVector<f64>, opts: &QpOptions) -> EqualitySolution {
        let g0 = &self.constraints_pinv * rhs;
        let feasibility = if rhs.is_empty() {
            0.0
        } else {
            inf_norm(&(&self.constraints * &g0 - rhs))
        };
        let mut status = QpStatus::Optimal;
        if feasibility > opts.feasibility_tol * inf_norm(rhs).max(1.0) {
            status = QpStatus::Infeasible;
        }
        let c = &self.hessian * &g0 + linear;
        let g = &g0 - &self.reduced_inverse * &c;
        if status == QpStatus::Optimal {
            let drift = inf_norm(&(&self.flat_directions * &c));
            if drift > opts.stationarity_tol * inf_norm(&c).max(1.0) {
                status = QpStatus::Unbounded;
            }
        }
        let multipliers = self.multipliers(&(&self.hessian * &g + linear));
        EqualitySolution {
            g,
            multipliers,
            status,
            feasibility,
        }
    }

    /// Least-squares multipliers `y` with `grad + Eᵀy ≈ 0`.
    fn multipliers(&self, grad: &DVector<f64>) -> DVector<f64> {
        -(self.constraints_pinv.transpose() * grad)
    }

    /// Step `p` minimizing `½ pᵀHp + gradᵀp` with `E p = 0`, or a descent ray of zero curvature.
    fn direction(&self, grad: &DVector<f64>, opts: &QpOptions) -> Direction {
        let flat = &self.flat_directions * grad;
        if inf_norm(&flat) > opts.stationarity_tol * inf_norm(grad).max(1.0) {
            return Direction::Ray(-flat);
        }
        Direction::Newton(-(&self.reduced_inverse * grad))
    }
}

fn residuals(qp: &Qp, g: &DVector<f64>, nu: &DVector<f64>, mu: &DVector<f64>) -> KktResiduals {
    let mut grad = &qp.hessian * g + &qp.linear;
    if !nu.is_empty() {
        grad += qp.eq_matrix.transpose() * nu;
    }
    if !mu.is_empty() {
        grad += qp.ineq_matrix.transpose() * mu;
    }
    let mut feas: f64 = 0.0;
    if !qp.eq_rhs.is_empty() {
        feas = inf_norm(&(&qp.eq_matrix * g - &qp.eq_rhs));
    }
    let mut comp: f64 = 0.0;
    if !qp.ineq_rhs.is_empty() {
        let slack = &qp.ineq_matrix * g - &qp.ineq_rhs;
        for (s, m) in slack.iter().zip(mu.iter()) {
            feas = feas.max(s.max(0.0));
            comp = comp.max((s * m).abs());
        }
    }
    KktResiduals {
        stationarity: inf_norm(&grad),
        feasibility: feas,
        complementarity: comp,
    }
}

fn working_matrix(qp: &Qp, working: &[usize]) -> DMatrix<f64> {
    let rows: Vec<DMatrix<f64>> = working.iter().map(|&i| qp.ineq_matrix.rows(i, 1).into_owned()).collect();
    let mut parts: Vec<&DMatrix<f64>> = alloc::vec![&qp.eq_matrix];
    parts.extend(rows.iter());
    vstack(&parts)
}

fn working_rhs(qp: &Qp, working: &[usize]) -> DVector<f64> {
    let p = qp.eq_rhs.len();
    DVector::from_fn(p + working.len(), |k, _| {
        if k < p {
            qp.eq_rhs[k]
        } else {
            qp.ineq_rhs[working[k - p]]
        }
    })
}

fn finish(qp: &Qp, g: DVector<f64>, status: QpStatus, nu: DVector<f64>, mu: DVector<f64>, active_set: Vec<usize>, iterations: usize) -> QpSolution {
    let residuals = residuals(qp, &g, &nu, &mu);
    QpSolution {
        objective: qp.objective(&g),
        g,
        status,
        eq_multipliers: nu,
        ineq_multipliers: mu,
        active_set,
        iterations,
        residuals,
    }
}

/// Primal active-set iterations from a feasible `g` with working set `working`.
fn active_set(qp: &Qp, opts: &QpOptions, mut g: DVector<f64>, mut working: Vec<usize>, iterations: &mut usize) -> Result<QpSolution> {
    let n = qp.dim();
    let p = qp.eq_rhs.len();
    let n_in = qp.ineq_rhs.len();
    let limit = opts.iteration_factor * n.max(1);
    loop {
        if *iterations >= limit {
            return Err(Error::IterationLimit(limit));
        }
        *iterations += 1;
        let e = working_matrix(qp, &working);
        let solver = EqualitySolver::new(&qp.hessian, &e, opts.pinv_rtol);
        let grad = &qp.hessian * &g + &qp.linear;
        let (step, bounded) = match solver.direction(&grad, opts) {
            Direction::Newton(step) => (step, true),
            Direction::Ray(step) => (step, false),
        };
        if bounded && inf_norm(&step) <= opts.stationarity_tol * inf_norm(&g).max(1.0) {
            let y = solver.multipliers(&grad);
            let (most_negative, _) = (0..working.len())
                .map(|k| (k, y[p + k]))
                .fold((usize::MAX, -opts.stationarity_tol), |best, cur| if cur.1 < best.1 { cur } else { best });
            if most_negative == usize::MAX {
                let nu = y.rows(0, p).into_owned();
                let mut mu = DVector::zeros(n_in);
                for (k, &i) in working.iter().enumerate() {
                    mu[i] = y[p + k].max(0.0);
                }
                working.sort_unstable();
                return Ok(finish(qp, g, QpStatus::Optimal, nu, mu, working, *iterations));
            }
            working.remove(most_negative);
            continue;
        }
        let mut alpha = if bounded { 1.0 } else { f64::INFINITY };
        let mut blocking = None;
        for i in 0..n_in {
            if working.contains(&i) {
                continue;
            }
            let row = qp.ineq_matrix.row(i);
            let rate = (row * &step)[0];
            if rate <= 1e-14 * inf_norm(&step) {
                continue;
            }
            let room = (qp.ineq_rhs[i] - (row * &g)[0]).max(0.0);
            let t = room / rate;
            if t < alpha {
                alpha = t;
                blocking = Some(i);
            }
        }
        if alpha.is_infinite() {
            let nu = DVector::zeros(p);
            let mu = DVector::zeros(n_in);
            return Ok(finish(qp, g, QpStatus::Unbounded, nu, mu, working, *iterations));
        }
        g += step * alpha;
        if let Some(i) = blocking {
            working.push(i);
        }
    }
}

fn satisfies(qp: &Qp, g: &DVector<f64>, tol: f64) -> bool {
    let slack = &qp.ineq_matrix * g - &qp.ineq_rhs;
    slack
        .iter()
        .zip(qp.ineq_rhs.iter())
        .all(|(s, b)| *s <= tol * b.abs().max(1.0))
}

/// Phase 1: `min ½t²` over `(g, t)` with `A_eq g = b_eq`, `A_in g − t ≤ b_in`, `t ≥ 0`.
fn find_feasible(qp: &Qp, opts: &QpOptions, start: &DVector<f64>, iterations: &mut usize) -> Result<Option<DVector<f64>>> {
    let n = qp.dim();
    let n_in = qp.ineq_rhs.len();
    let mut hessian = DMatrix::zeros(n + 1, n + 1);
    hessian[(n, n)] = 1.0;
    let mut eq = DMatrix::zeros(qp.eq_matrix.nrows(), n + 1);
    eq.view_mut((0, 0), (qp.eq_matrix.nrows(), n)).copy_from(&qp.eq_matrix);
    let mut ineq = DMatrix::zeros(n_in + 1, n + 1);
    ineq.view_mut((0, 0), (n_in, n)).copy_from(&qp.ineq_matrix);
    for i in 0..n_in {
        ineq[(i, n)] = -1.0;
    }
    ineq[(n_in, n)] = -1.0;
    let mut rhs = DVector::zeros(n_in + 1);
    rhs.rows_mut(0, n_in).copy_from(&qp.ineq_rhs);
    let aux = Qp::unconstrained(hessian, DVector::zeros(n + 1))
        .with_equalities(eq, qp.eq_rhs.clone())
        .with_inequalities(ineq, rhs);
    let violation = (&qp.ineq_matrix * start - &qp.ineq_rhs).max().max(0.0);
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(start);
    z[n] = violation;
    let mut aux_opts = *opts;
    aux_opts.iteration_factor = opts.iteration_factor * (n + 1) / n.max(1) + 1;
    let sol = active_set(&aux, &aux_opts, z, Vec::new(), iterations)?;
    let t = sol.g[n];
    if t > opts.feasibility_tol * inf_norm(&qp.ineq_rhs).max(1.0) {
        return Ok(None);
    }
    Ok(Some(sol.g.rows(0, n).into_owned()))
}

/// Solve a convex QP. `warm_start` is a candidate working set of inequality rows.
pub fn solve_qp(qp: &Qp, opts: &QpOptions, warm_start: Option<&[usize]>) -> Result<QpSolution> {
    qp.validate()?;
    let n_in = qp.ineq_rhs.len();
    let eq_solver = EqualitySolver::new(&qp.hessian, &qp.eq_matrix, opts.pinv_rtol);
    let base = eq_solver.solve(&qp.linear, &qp.eq_rhs, opts);
    if n_in == 0 || base.status == QpStatus::Infeasible {
        let status = base.status;
        let mu = DVector::zeros(n_in);
        return Ok(finish(qp, base.g, status, base.multipliers, mu, Vec::new(), 1));
    }
    let mut iterations = 1;
    if let Some(ws) = warm_start.filter(|ws| !ws.is_empty() && ws.iter().all(|&i| i < n_in)) {
        let mut ws: Vec<usize> = ws.to_vec();
        ws.sort_unstable();
        ws.dedup();
        let e = working_matrix(qp, &ws);
        let solver = EqualitySolver::new(&qp.hessian, &e, opts.pinv_rtol);
        let cand = solver.solve(&qp.linear, &working_rhs(qp, &ws), opts);
        iterations += 1;
        if cand.status == QpStatus::Optimal && satisfies(qp, &cand.g, opts.feasibility_tol) {
            return active_set(qp, opts, cand.g, ws, &mut iterations);
        }
    }
    if satisfies(qp, &base.g, opts.feasibility_tol) {
        return active_set(qp, opts, base.g, Vec::new(), &mut iterations);
    }
    match find_feasible(qp, opts, &base.g, &mut iterations)? {
        Some(g) => active_set(qp, opts, g, Vec::new(), &mut iterations),
        None => {
            let mu = DVector::zeros(n_in);
            let nu = DVector::zeros(qp.eq_rhs.len());
            Ok(finish(qp, base.g, QpStatus::Infeasible, nu, mu, Vec::new(), iterations))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_vertex() {
        let mut f = DVector::zeros(3);
        f[0] = -2.0;
        let sol = solve_qp(&Qp::unconstrained(DMatrix::identity(3, 3), f), &QpOptions::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.g, DVector::from_column_slice(&[2.0, 0.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn projection_onto_line() {
        let qp = Qp::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 2.0));
        let sol = solve_qp(&qp, &QpOptions::default(), None).unwrap();
        assert_relative_eq!(sol.g, DVector::from_element(2, 1.0), epsilon = 1e-14);
        assert!(sol.residuals.max() < 1e-12);
        assert_relative_eq!(sol.eq_multipliers[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_toy_matches_grid_refinement() {
        // ½·12g² − 16g
        let qp = Qp::unconstrained(DMatrix::from_element(1, 1, 12.0), DVector::from_element(1, -16.0));
        let sol = solve_qp(&qp, &QpOptions::default(), None).unwrap();
        let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
        for _ in 0..60 {
            let step = (hi - lo) / 10.0;
            let best = (0..=10)
                .map(|k| lo + step * k as f64)
                .min_by(|a, b| qp.objective(&DVector::from_element(1, *a)).total_cmp(&qp.objective(&DVector::from_element(1, *b))))
                .unwrap();
            lo = best - step;
            hi = best + step;
        }
        assert_relative_eq!(sol.g[0], 0.5 * (lo + hi), epsilon = 1e-7);
        assert_relative_eq!(sol.g[0], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn semidefinite_gives_minimum_norm() {
        // H = diag(1, 0): g₂ is free, minimum norm picks 0.
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let sol = solve_qp(&Qp::unconstrained(h, DVector::from_column_slice(&[-1.0, 0.0])), &QpOptions::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.g, DVector::from_column_slice(&[1.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn unbounded_direction_detected() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let sol = solve_qp(&Qp::unconstrained(h.clone(), DVector::from_column_slice(&[0.0, 1.0])), &QpOptions::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Unbounded);
        // a box on g₂ makes it bounded again
        let qp = Qp::unconstrained(h, DVector::from_column_slice(&[0.0, 1.0]))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[0.0, -1.0]), DVector::from_element(1, 3.0));
        let sol = solve_qp(&qp, &QpOptions::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.g[1], -3.0, epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let qp = Qp::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(a, DVector::from_column_slice(&[1.0, 2.0]));
        assert_eq!(solve_qp(&qp, &QpOptions::default(), None).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn box_constrained_vertex() {
        // min ½‖g − (2, 2)‖² s.t. g ≤ 1 componentwise and g₁ + g₂ = 1.5
        let qp = Qp::unconstrained(DMatrix::identity(2, 2), DVector::from_element(2, -2.0))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_element(1, 1.5))
            .with_inequalities(DMatrix::identity(2, 2), DVector::from_element(2, 1.0));
        let sol = solve_qp(&qp, &QpOptions::default(), None).unwrap();
        assert_relative_eq!(sol.g, DVector::from_element(2, 0.75), epsilon = 1e-12);

        let qp = Qp::unconstrained(DMatrix::identity(2, 2), DVector::from_column_slice(&[-4.0, 0.0]))
            .with_inequalities(DMatrix::identity(2, 2), DVector::from_element(2, 1.0));
        let sol = solve_qp(&qp, &QpOptions::default(), None).unwrap();
        assert_relative_eq!(sol.g, DVector::from_column_slice(&[1.0, 0.0]), epsilon = 1e-12);
        assert_eq!(sol.active_set, alloc::vec![0]);
        assert_relative_eq!(sol.ineq_multipliers[0], 3.0, epsilon = 1e-12);
        let warm = solve_qp(&qp, &QpOptions::default(), Some(&sol.active_set)).unwrap();
        assert_relative_eq!(warm.g, sol.g, epsilon = 1e-14);
    }

    #[test]
    fn phase_one_finds_interior() {
        // start (0,0) violates g₁ ≥ 1; optimum of ½‖g‖² is (1, 0)
        let qp = Qp::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[-1.0, 0.0]), DVector::from_element(1, -1.0));
        let sol = solve_qp(&qp, &QpOptions::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.g, DVector::from_column_slice(&[1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn contradictory_boxes_are_infeasible() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let qp = Qp::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_inequalities(a, DVector::from_column_slice(&[-1.0, -1.0]));
        assert_eq!(solve_qp(&qp, &QpOptions::default(), None).unwrap().status, QpStatus::Infeasible);
    }
}
