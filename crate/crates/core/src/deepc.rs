//! DeePC: condensing the data-driven predictive control problem into a QP in `g`,
//! solving it, and closing the loop in receding horizon.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::hankel::{is_persistently_exciting, partition, HankelBlocks};
use crate::linalg::{block_diag_repeat, min_symmetric_eigenvalue, pinv, stack_rows, unstack_rows, vstack};
use crate::lti_sim::{simulate, StateSpaceModel};
use crate::qp::{solve_qp, EqualitySolver, Qp, QpOptions, QpStatus};

/// Per-channel box `[low, high]`; infinite ends are allowed.
pub type Bounds = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepcConfig {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub lambda_g: f64,
    pub t_ini: usize,
    pub horizon: usize,
    pub u_bounds: Option<Bounds>,
    pub y_bounds: Option<Bounds>,
    pub qp: QpOptions,
}

fn check_weight(name: &str, w: &DMatrix<f64>) -> Result<()> {
    if !w.is_square() || w.is_empty() {
        return Err(invalid(alloc::format!("{name} must be a non-empty square matrix")));
    }
    if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
        return Err(invalid(alloc::format!("{name} must be symmetric")));
    }
    if !(min_symmetric_eigenvalue(w) > 0.0) {
        return Err(invalid(alloc::format!("{name} must be positive definite")));
    }
    Ok(())
}

fn check_bounds(name: &str, b: &Bounds, channels: usize) -> Result<()> {
    if b.len() != channels {
        return Err(mismatch("bound channels", channels, b.len()));
    }
    if b.iter().any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
        return Err(invalid(alloc::format!("{name} needs low <= high on every channel")));
    }
    Ok(())
}

impl DeepcConfig {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, lambda_g: f64, t_ini: usize, horizon: usize) -> Result<Self> {
        check_weight("Q", &q)?;
        check_weight("R", &r)?;
        if !(lambda_g >= 0.0) || !lambda_g.is_finite() {
            return Err(invalid("lambda_g must be a finite non-negative number"));
        }
        if t_ini == 0 || horizon == 0 {
            return Err(invalid("T_ini and N must be at least 1"));
        }
        Ok(Self {
            q,
            r,
            lambda_g,
            t_ini,
            horizon,
            u_bounds: None,
            y_bounds: None,
            qp: QpOptions::default(),
        })
    }

    pub fn with_lambda(&self, lambda_g: f64) -> Result<Self> {
        let mut c = self.clone();
        if !(lambda_g >= 0.0) || !lambda_g.is_finite() {
            return Err(invalid("lambda_g must be a finite non-negative number"));
        }
        c.lambda_g = lambda_g;
        Ok(c)
    }

    pub fn with_u_bounds(mut self, b: Bounds) -> Result<Self> {
        check_bounds("u_bounds", &b, self.r.nrows())?;
        self.u_bounds = Some(b);
        Ok(self)
    }

    pub fn with_y_bounds(mut self, b: Bounds) -> Result<Self> {
        check_bounds("y_bounds", &b, self.q.nrows())?;
        self.y_bounds = Some(b);
        Ok(self)
    }

    pub fn n_u(&self) -> usize {
        self.r.nrows()
    }
    pub fn n_y(&self) -> usize {
        self.q.nrows()
    }
    pub fn has_bounds(&self) -> bool {
        self.u_bounds.is_some() || self.y_bounds.is_some()
    }
}

/// Past `T_ini` inputs and outputs fixing the initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialWindow {
    pub u_ini: DMatrix<f64>,
    pub y_ini: DMatrix<f64>,
}

impl InitialWindow {
    pub fn new(u_ini: DMatrix<f64>, y_ini: DMatrix<f64>) -> Result<Self> {
        if u_ini.nrows() != y_ini.nrows() || u_ini.nrows() == 0 {
            return Err(mismatch("initial window lengths", u_ini.nrows(), y_ini.nrows()));
        }
        Ok(Self { u_ini, y_ini })
    }
    pub fn len(&self) -> usize {
        self.u_ini.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.u_ini.nrows() == 0
    }
}

/// References over one prediction horizon (`N × n_u` and `N × n_y`).
#[derive(Debug, Clone, PartialEq)]
pub struct References {
    pub u_ref: DMatrix<f64>,
    pub y_ref: DMatrix<f64>,
}

impl References {
    pub fn zeros(horizon: usize, n_u: usize, n_y: usize) -> Self {
        Self {
            u_ref: DMatrix::zeros(horizon, n_u),
            y_ref: DMatrix::zeros(horizon, n_y),
        }
    }
}

/// Closed-loop references; rows past the end repeat the last row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub u_ref: DMatrix<f64>,
    pub y_ref: DMatrix<f64>,
}

impl ReferenceTrajectory {
    pub fn zeros(n_u: usize, n_y: usize) -> Self {
        Self {
            u_ref: DMatrix::zeros(1, n_u),
            y_ref: DMatrix::zeros(1, n_y),
        }
    }

    pub fn new(u_ref: DMatrix<f64>, y_ref: DMatrix<f64>) -> Result<Self> {
        if u_ref.nrows() == 0 || y_ref.nrows() == 0 {
            return Err(invalid("reference trajectories need at least one sample"));
        }
        Ok(Self { u_ref, y_ref })
    }

    fn at(m: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
        m.rows(t.min(m.nrows() - 1), 1).into_owned()
    }

    pub fn window(&self, t: usize, horizon: usize) -> References {
        let u_rows: Vec<_> = (0..horizon).map(|k| Self::at(&self.u_ref, t + k)).collect();
        let y_rows: Vec<_> = (0..horizon).map(|k| Self::at(&self.y_ref, t + k)).collect();
        References {
            u_ref: vstack(&u_rows.iter().collect::<Vec<_>>()),
            y_ref: vstack(&y_rows.iter().collect::<Vec<_>>()),
        }
    }

    /// `T × n_y` output reference over the first `len` steps.
    pub fn outputs(&self, len: usize) -> DMatrix<f64> {
        let rows: Vec<_> = (0..len).map(|t| Self::at(&self.y_ref, t)).collect();
        vstack(&rows.iter().collect::<Vec<_>>())
    }
}

/// DeePC problem rewritten in `g`: cost `gᵀHg + fᵀg + c` (no ½ factor) plus constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedProblem {
    pub cost_quadratic: DMatrix<f64>,
    pub cost_linear: DVector<f64>,
    pub cost_constant: f64,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl CondensedProblem {
    /// Solver form `½ gᵀ(2H)g + fᵀg`.
    pub fn to_qp(&self) -> Qp {
        Qp::unconstrained(&self.cost_quadratic * 2.0, self.cost_linear.clone())
            .with_equalities(self.eq_matrix.clone(), self.eq_rhs.clone())
            .with_inequalities(self.ineq_matrix.clone(), self.ineq_rhs.clone())
    }
}

fn check_blocks(blocks: &HankelBlocks, config: &DeepcConfig) -> Result<()> {
    if blocks.t_ini != config.t_ini || blocks.horizon != config.horizon {
        return Err(invalid(alloc::format!(
            "blocks use T_ini={}, N={} but the config asks for T_ini={}, N={}",
            blocks.t_ini, blocks.horizon, config.t_ini, config.horizon
        )));
    }
    if blocks.n_u() != config.n_u() {
        return Err(mismatch("input channels", config.n_u(), blocks.n_u()));
    }
    if blocks.n_y() != config.n_y() {
        return Err(mismatch("output channels", config.n_y(), blocks.n_y()));
    }
    Ok(())
}

fn check_window(window: &InitialWindow, refs: &References, config: &DeepcConfig) -> Result<()> {
    if window.u_ini.shape() != (config.t_ini, config.n_u()) || window.y_ini.shape() != (config.t_ini, config.n_y()) {
        return Err(mismatch("initial window", config.t_ini, window.len()));
    }
    if refs.u_ref.shape() != (config.horizon, config.n_u()) || refs.y_ref.shape() != (config.horizon, config.n_y()) {
        return Err(mismatch("reference horizon", config.horizon, refs.y_ref.nrows()));
    }
    Ok(())
}

fn box_rows(block: &DMatrix<f64>, bounds: &Bounds, rows: &mut Vec<DMatrix<f64>>, rhs: &mut Vec<f64>) {
    let nc = bounds.len();
    for r in 0..block.nrows() {
        let (lo, hi) = bounds[r % nc];
        let row = block.rows(r, 1).into_owned();
        if hi.is_finite() {
            rhs.push(hi);
            rows.push(row.clone());
        }
        if lo.is_finite() {
            rhs.push(-lo);
            rows.push(-row);
        }
    }
}

fn inequality_block(blocks: &HankelBlocks, config: &DeepcConfig) -> (DMatrix<f64>, DVector<f64>) {
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    if let Some(b) = &config.u_bounds {
        box_rows(&blocks.u_f, b, &mut rows, &mut rhs);
    }
    if let Some(b) = &config.y_bounds {
        box_rows(&blocks.y_f, b, &mut rows, &mut rhs);
    }
    if rows.is_empty() {
        return (DMatrix::zeros(0, blocks.columns()), DVector::zeros(0));
    }
    (vstack(&rows.iter().collect::<Vec<_>>()), DVector::from_vec(rhs))
}

/// Cost Hessian `U_Fᵀ(I⊗R)U_F + Y_Fᵀ(I⊗Q)Y_F + λ_g I` and the equality block `[U_P; Y_P]`.
fn cost_and_equalities(blocks: &HankelBlocks, config: &DeepcConfig) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let rbar = block_diag_repeat(&config.r, config.horizon);
    let qbar = block_diag_repeat(&config.q, config.horizon);
    let m = blocks.columns();
    let ur = blocks.u_f.transpose() * &rbar;
    let yq = blocks.y_f.transpose() * &qbar;
    let hessian = &ur * &blocks.u_f + &yq * &blocks.y_f + DMatrix::identity(m, m) * config.lambda_g;
    let hessian = (&hessian + hessian.transpose()) * 0.5;
    let eq = vstack(&[&blocks.u_p, &blocks.y_p]);
    (hessian, eq, ur, yq)
}

fn window_rhs(window: &InitialWindow) -> DVector<f64> {
    let u = stack_rows(&window.u_ini);
    let y = stack_rows(&window.y_ini);
    DVector::from_iterator(u.len() + y.len(), u.iter().chain(y.iter()).copied())
}

fn linear_term(ur: &DMatrix<f64>, yq: &DMatrix<f64>, refs: &References) -> (DVector<f64>, f64, DVector<f64>, DVector<f64>) {
    let uref = stack_rows(&refs.u_ref);
    let yref = stack_rows(&refs.y_ref);
    let f = (ur * &uref + yq * &yref) * -2.0;
    (f, 0.0, uref, yref)
}

/// Eliminate `u_f = U_F g`, `y_f = Y_F g` from the DeePC problem.
pub fn condense(
    blocks: &HankelBlocks,
    window: &InitialWindow,
    refs: &References,
    config: &DeepcConfig,
) -> Result<CondensedProblem> {
    check_blocks(blocks, config)?;
    check_window(window, refs, config)?;
    let (cost_quadratic, eq_matrix, ur, yq) = cost_and_equalities(blocks, config);
    let (cost_linear, _, uref, yref) = linear_term(&ur, &yq, refs);
    let rbar = block_diag_repeat(&config.r, config.horizon);
    let qbar = block_diag_repeat(&config.q, config.horizon);
    let cost_constant = uref.dot(&(&rbar * &uref)) + yref.dot(&(&qbar * &yref));
    let (ineq_matrix, ineq_rhs) = inequality_block(blocks, config);
    Ok(CondensedProblem {
        cost_quadratic,
        cost_linear,
        cost_constant,
        eq_matrix,
        eq_rhs: window_rhs(window),
        ineq_matrix,
        ineq_rhs,
    })
}

/// Solution of one DeePC problem.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub g: DVector<f64>,
    /// `N × n_u`, equal to `U_F g`.
    pub u_f: DMatrix<f64>,
    /// `N × n_y`, equal to `Y_F g`.
    pub y_f: DMatrix<f64>,
    /// Tracking cost plus `λ_g ‖g‖²`.
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub active_set: Vec<usize>,
}

fn tracking_cost(u_f: &DMatrix<f64>, y_f: &DMatrix<f64>, refs: &References, config: &DeepcConfig) -> f64 {
    let mut cost = 0.0;
    for k in 0..config.horizon {
        let du = (u_f.row(k) - refs.u_ref.row(k)).transpose();
        let dy = (y_f.row(k) - refs.y_ref.row(k)).transpose();
        cost += dy.dot(&(&config.q * &dy)) + du.dot(&(&config.r * &du));
    }
    cost
}

fn assemble_step(
    blocks: &HankelBlocks,
    refs: &References,
    config: &DeepcConfig,
    g: DVector<f64>,
    status: QpStatus,
    iterations: usize,
    active_set: Vec<usize>,
) -> StepSolution {
    let u_f = unstack_rows(&(&blocks.u_f * &g), config.n_u());
    let y_f = unstack_rows(&(&blocks.y_f * &g), config.n_y());
    let objective = tracking_cost(&u_f, &y_f, refs, config) + config.lambda_g * g.norm_squared();
    StepSolution {
        g,
        u_f,
        y_f,
        objective,
        status,
        iterations,
        active_set,
    }
}

/// Condense and solve a single DeePC problem.
pub fn deepc_step(
    blocks: &HankelBlocks,
    window: &InitialWindow,
    refs: &References,
    config: &DeepcConfig,
) -> Result<StepSolution> {
    DeepcController::new(blocks.clone(), config.clone())?.step(window, refs)
}

/// Receding-horizon controller over fixed predictor blocks.
///
/// Without box constraints the cost Hessian and equality matrix never change,
/// so the null-space factorization is computed once. With boxes the previous
/// active set seeds the next solve.
#[derive(Debug, Clone)]
pub struct DeepcController {
    blocks: HankelBlocks,
    config: DeepcConfig,
    cost_quadratic: DMatrix<f64>,
    eq_matrix: DMatrix<f64>,
    ur: DMatrix<f64>,
    yq: DMatrix<f64>,
    factor: Option<EqualitySolver>,
    warm_start: Vec<usize>,
}

impl DeepcController {
    pub fn new(blocks: HankelBlocks, config: DeepcConfig) -> Result<Self> {
        check_blocks(&blocks, &config)?;
        let (cost_quadratic, eq_matrix, ur, yq) = cost_and_equalities(&blocks, &config);
        let factor = (!config.has_bounds())
            .then(|| EqualitySolver::new(&(&cost_quadratic * 2.0), &eq_matrix, config.qp.pinv_rtol));
        Ok(Self {
            blocks,
            config,
            cost_quadratic,
            eq_matrix,
            ur,
            yq,
            factor,
            warm_start: Vec::new(),
        })
    }

    pub fn blocks(&self) -> &HankelBlocks {
        &self.blocks
    }
    pub fn config(&self) -> &DeepcConfig {
        &self.config
    }

    pub fn step(&mut self, window: &InitialWindow, refs: &References) -> Result<StepSolution> {
        check_window(window, refs, &self.config)?;
        let (linear, _, _, _) = linear_term(&self.ur, &self.yq, refs);
        let rhs = window_rhs(window);
        if let Some(factor) = &self.factor {
            let sol = factor.solve(&linear, &rhs, &self.config.qp);
            return Ok(assemble_step(&self.blocks, refs, &self.config, sol.g, sol.status, 1, Vec::new()));
        }
        let (ineq_matrix, ineq_rhs) = inequality_block(&self.blocks, &self.config);
        let qp = Qp::unconstrained(&self.cost_quadratic * 2.0, linear)
            .with_equalities(self.eq_matrix.clone(), rhs)
            .with_inequalities(ineq_matrix, ineq_rhs);
        let warm = (!self.warm_start.is_empty()).then_some(self.warm_start.as_slice());
        let sol = solve_qp(&qp, &self.config.qp, warm)?;
        self.warm_start = if sol.status == QpStatus::Optimal { sol.active_set.clone() } else { Vec::new() };
        Ok(assemble_step(&self.blocks, refs, &self.config, sol.g, sol.status, sol.iterations, sol.active_set))
    }
}

/// Diagnostics kept for every closed-loop step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub status: QpStatus,
    pub objective: f64,
    pub g_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    /// `T_sim × n_u`; shorter if a step failed.
    pub u_applied: DMatrix<f64>,
    /// `T_sim × n_y`, `y_t = C x_t + D u_t`.
    pub y_realized: DMatrix<f64>,
    /// Zero-input samples that formed the first initial window.
    pub warmup_u: DMatrix<f64>,
    pub warmup_y: DMatrix<f64>,
    pub per_step: Vec<StepSummary>,
    pub config: DeepcConfig,
    /// `Some(status)` if the loop stopped early on a non-optimal step.
    pub terminated: Option<QpStatus>,
}

impl ClosedLoopResult {
    pub fn completed(&self) -> bool {
        self.terminated.is_none()
    }
}

fn rows_to_matrix(rows: &[DVector<f64>], width: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), width);
    for (t, r) in rows.iter().enumerate() {
        m.set_row(t, &r.transpose());
    }
    m
}

/// Regulate the true plant (noiselessly) for `t_sim` steps with the given predictor.
///
/// The first `T_ini` samples come from driving the plant with zero input from `x0`.
pub fn run_closed_loop(
    plant: &StateSpaceModel,
    x0: &DVector<f64>,
    blocks: &HankelBlocks,
    refs: &ReferenceTrajectory,
    config: &DeepcConfig,
    t_sim: usize,
) -> Result<ClosedLoopResult> {
    if x0.len() != plant.n_x() {
        return Err(mismatch("x0 length", plant.n_x(), x0.len()));
    }
    if plant.n_u() != config.n_u() || plant.n_y() != config.n_y() {
        return Err(invalid("plant and controller dimensions differ"));
    }
    if refs.u_ref.ncols() != config.n_u() || refs.y_ref.ncols() != config.n_y() {
        return Err(invalid("reference channels do not match the controller"));
    }
    let mut controller = DeepcController::new(blocks.clone(), config.clone())?;
    let (nu, ny, t_ini) = (plant.n_u(), plant.n_y(), config.t_ini);

    let mut x = x0.clone();
    let mut us: Vec<DVector<f64>> = Vec::with_capacity(t_ini + t_sim);
    let mut ys: Vec<DVector<f64>> = Vec::with_capacity(t_ini + t_sim);
    for _ in 0..t_ini {
        let u = DVector::zeros(nu);
        let (next, y) = plant.step(&x, &u);
        us.push(u);
        ys.push(y);
        x = next;
    }

    let mut per_step = Vec::with_capacity(t_sim);
    let mut terminated = None;
    for t in 0..t_sim {
        let k = us.len() - t_ini;
        let window = InitialWindow::new(rows_to_matrix(&us[k..], nu), rows_to_matrix(&ys[k..], ny))?;
        let sol = controller.step(&window, &refs.window(t, config.horizon))?;
        per_step.push(StepSummary {
            status: sol.status,
            objective: sol.objective,
            g_norm: sol.g.norm(),
            iterations: sol.iterations,
        });
        if sol.status != QpStatus::Optimal {
            terminated = Some(sol.status);
            break;
        }
        let u = sol.u_f.row(0).transpose();
        let (next, y) = plant.step(&x, &u);
        us.push(u);
        ys.push(y);
        x = next;
    }

    Ok(ClosedLoopResult {
        warmup_u: rows_to_matrix(&us[..t_ini], nu),
        warmup_y: rows_to_matrix(&ys[..t_ini], ny),
        u_applied: rows_to_matrix(&us[t_ini..], nu),
        y_realized: rows_to_matrix(&ys[t_ini..], ny),
        per_step,
        config: config.clone(),
        terminated,
    })
}

/// Predictor blocks from a noiseless experiment on the plant itself.
pub fn make_oracle_blocks(
    plant: &StateSpaceModel,
    x0: &DVector<f64>,
    u_excitation: &DMatrix<f64>,
    t_ini: usize,
    horizon: usize,
) -> Result<HankelBlocks> {
    let order = t_ini + horizon + plant.n_x();
    match is_persistently_exciting(u_excitation, order) {
        Ok(check) if check.persistently_exciting => {}
        Ok(check) => log::warn!(
            "excitation is not persistently exciting of order {order} (rank {} of {})",
            check.rank,
            check.required_rank
        ),
        Err(_) => log::warn!("excitation is too short for order {order}"),
    }
    let sim = simulate(plant, x0, u_excitation)?;
    partition(u_excitation, &sim.y, t_ini, horizon)
}

/// Data-driven prediction of `y_f` for a candidate `u_f`: minimum-norm `g` with
/// `[U_P; Y_P; U_F] g = [u_ini; y_ini; u_f]`, then `Y_F g`.
pub fn predict_outputs(blocks: &HankelBlocks, window: &InitialWindow, u_f: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    if u_f.shape() != (blocks.horizon, blocks.n_u()) {
        return Err(mismatch("u_f rows", blocks.horizon, u_f.nrows()));
    }
    if window.u_ini.shape() != (blocks.t_ini, blocks.n_u()) || window.y_ini.shape() != (blocks.t_ini, blocks.n_y()) {
        return Err(mismatch("initial window", blocks.t_ini, window.len()));
    }
    let a = vstack(&[&blocks.u_p, &blocks.y_p, &blocks.u_f]);
    let w = window_rhs(window);
    let uf = stack_rows(u_f);
    let rhs = DVector::from_iterator(w.len() + uf.len(), w.iter().chain(uf.iter()).copied());
    let g = pinv(&a, rtol) * rhs;
    Ok(unstack_rows(&(&blocks.y_f * g), blocks.n_y()))
}
