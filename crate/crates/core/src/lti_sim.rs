//! Discrete-time LTI simulation, families of similar plants and measurement noise.
//!
//! Trajectories are `T × n` matrices: row `t` holds the sample at time `t`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::stack_rows;
use crate::rng;

/// State-space matrices `(A, B, C, D)` of a discrete-time LTI plant.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let nx = a.nrows();
        if nx == 0 || !a.is_square() {
            return Err(mismatch("A", "non-empty square matrix", alloc::format!("{}x{}", a.nrows(), a.ncols())));
        }
        let nu = b.ncols();
        let ny = c.nrows();
        if nu == 0 || ny == 0 {
            return Err(invalid("n_u and n_y must be at least 1"));
        }
        if b.nrows() != nx {
            return Err(mismatch("B rows", nx, b.nrows()));
        }
        if c.ncols() != nx {
            return Err(mismatch("C columns", nx, c.ncols()));
        }
        if d.shape() != (ny, nu) {
            return Err(mismatch(
                "D",
                alloc::format!("{ny}x{nu}"),
                alloc::format!("{}x{}", d.nrows(), d.ncols()),
            ));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// Same model with a different state transition matrix.
    pub fn with_a(&self, a: DMatrix<f64>) -> Result<Self> {
        Self::new(a, self.b.clone(), self.c.clone(), self.d.clone())
    }

    /// Largest eigenvalue magnitude of `A`.
    pub fn spectral_radius(&self) -> f64 {
        self.a
            .clone()
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |r, e| r.max(libm::hypot(e.re, e.im)))
    }

    pub fn is_schur_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// One step of the state update and the output at the current state.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let y = &self.c * x + &self.d * u;
        let next = &self.a * x + &self.b * u;
        (next, y)
    }

    fn check_dims(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<()> {
        if x0.len() != self.n_x() {
            return Err(mismatch("x0 length", self.n_x(), x0.len()));
        }
        if u.ncols() != self.n_u() {
            return Err(mismatch("input channels", self.n_u(), u.ncols()));
        }
        if u.nrows() == 0 {
            return Err(invalid("input sequence must have at least one sample"));
        }
        Ok(())
    }
}

/// Built-in plant and perturbation directions of the numerical case study.
pub mod presets {
    use super::StateSpaceModel;
    use nalgebra::DMatrix;

    /// Nominal two-state SISO plant.
    pub fn nominal() -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[0.7326, -0.0891, 0.1722, 0.9909]),
            DMatrix::from_row_slice(2, 1, &[0.0609, 0.0064]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::zeros(1, 1),
        )
        .expect("preset dimensions are consistent")
    }

    /// Rotation-like perturbation `[[0, 1], [-1, 0]]`.
    pub fn delta_a_rotation() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    /// Identity perturbation.
    pub fn delta_a_identity() -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
}

/// Noiseless response of a plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// `T × n_y` outputs.
    pub y: DMatrix<f64>,
    /// `(T+1) × n_x` states, `x[0] = x0`.
    pub x: DMatrix<f64>,
}

/// Propagate `x[t+1] = A x[t] + B u[t]`, `y[t] = C x[t] + D u[t]`.
pub fn simulate(model: &StateSpaceModel, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<Simulation> {
    model.check_dims(x0, u)?;
    let t_len = u.nrows();
    let mut y = DMatrix::zeros(t_len, model.n_y());
    let mut x = DMatrix::zeros(t_len + 1, model.n_x());
    x.set_row(0, &x0.transpose());
    let mut state = x0.clone();
    for t in 0..t_len {
        let ut = u.row(t).transpose();
        let (next, yt) = model.step(&state, &ut);
        y.set_row(t, &yt.transpose());
        x.set_row(t + 1, &next.transpose());
        state = next;
    }
    Ok(Simulation { y, x })
}

/// Nominal plant plus `M − 1` members with perturbed state transition matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemFamily {
    nominal: StateSpaceModel,
    members: Vec<StateSpaceModel>,
    delta_a: DMatrix<f64>,
    scale: f64,
}

impl SystemFamily {
    pub fn nominal(&self) -> &StateSpaceModel {
        &self.nominal
    }
    /// Member 0 is the nominal plant.
    pub fn members(&self) -> &[StateSpaceModel] {
        &self.members
    }
    pub fn len(&self) -> usize {
        self.members.len()
    }
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
    pub fn delta_a(&self) -> &DMatrix<f64> {
        &self.delta_a
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    /// Indices of members whose `A` is not Schur stable.
    pub fn unstable_members(&self) -> Vec<usize> {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_schur_stable())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Perturbation coefficient `2(j−1)/(M−1) − 1` of member `j ≥ 1`.
pub fn perturbation_coefficient(j: usize, m: usize) -> f64 {
    2.0 * (j as f64 - 1.0) / (m as f64 - 1.0) - 1.0
}

/// Member `j = 1..M−1` gets `A_j = A + scale·(2(j−1)/(M−1) − 1)·ΔA`.
pub fn make_family(nominal: &StateSpaceModel, delta_a: &DMatrix<f64>, m: usize, scale: f64) -> Result<SystemFamily> {
    if m == 0 {
        return Err(invalid("family size M must be at least 1"));
    }
    let nx = nominal.n_x();
    if delta_a.shape() != (nx, nx) {
        return Err(mismatch(
            "delta_A",
            alloc::format!("{nx}x{nx}"),
            alloc::format!("{}x{}", delta_a.nrows(), delta_a.ncols()),
        ));
    }
    let mut members = Vec::with_capacity(m);
    members.push(nominal.clone());
    for j in 1..m {
        let coeff = scale * perturbation_coefficient(j, m);
        members.push(nominal.with_a(nominal.a() + delta_a * coeff)?);
    }
    let family = SystemFamily {
        nominal: nominal.clone(),
        members,
        delta_a: delta_a.clone(),
        scale,
    };
    let unstable = family.unstable_members();
    if !unstable.is_empty() {
        log::warn!("family members {unstable:?} are not Schur stable");
    }
    Ok(family)
}

/// Noise variance giving the requested SNR against the mean-square of `y_clean`.
///
/// `snr_db = +inf` means noiseless and returns 0.
pub fn snr_noise_variance(y_clean: &DMatrix<f64>, snr_db: f64) -> Result<f64> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(invalid("snr_db must be a number or +inf"));
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if y_clean.is_empty() {
        return Err(Error::ZeroSignal);
    }
    let ms = y_clean.iter().map(|v| v * v).sum::<f64>() / y_clean.len() as f64;
    if ms == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(ms / libm::pow(10.0, snr_db / 10.0))
}

/// One system's offline experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    /// 0 is the nominal system.
    pub system_index: usize,
    pub u: DMatrix<f64>,
    pub y_clean: DMatrix<f64>,
    pub y_noisy: DMatrix<f64>,
    pub noise_variance: f64,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.u.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }
}

/// Simulate every family member from `x0` under `u` and add white Gaussian noise at `snr_db`.
///
/// Member `i` draws its noise from the stream `(seed, NOISE, i)`.
pub fn collect_dataset(
    family: &SystemFamily,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<TrajectoryDataset>> {
    let mut out = Vec::with_capacity(family.len());
    for (i, member) in family.members().iter().enumerate() {
        let sim = simulate(member, x0, u)?;
        let var = snr_noise_variance(&sim.y, snr_db)?;
        let mut y_noisy = sim.y.clone();
        if var > 0.0 {
            let sd = libm::sqrt(var);
            let mut stream = rng::stream(seed, &[rng::purpose::NOISE, i as u64]);
            for t in 0..y_noisy.nrows() {
                for c in 0..y_noisy.ncols() {
                    let e: f64 = StandardNormal.sample(&mut stream);
                    y_noisy[(t, c)] += sd * e;
                }
            }
        }
        out.push(TrajectoryDataset {
            system_index: i,
            u: u.clone(),
            y_clean: sim.y,
            y_noisy,
            noise_variance: var,
        });
    }
    Ok(out)
}

/// Extended observability matrix and block-Toeplitz matrix of Markov parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrices {
    /// `n_y·T × n_x`, block rows `C, CA, …, CA^{T−1}`.
    pub gamma: DMatrix<f64>,
    /// `n_y·T × n_u·T`, `D` on the diagonal and `CA^{k−1}B` on the k-th subdiagonal.
    pub toeplitz: DMatrix<f64>,
}

pub fn structural_matrices(model: &StateSpaceModel, horizon: usize) -> Result<StructuralMatrices> {
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let (nx, nu, ny) = (model.n_x(), model.n_u(), model.n_y());
    let mut gamma = DMatrix::zeros(ny * horizon, nx);
    let mut toeplitz = DMatrix::zeros(ny * horizon, nu * horizon);
    // markov[k] = C A^{k-1} B for k >= 1
    let mut markov = Vec::with_capacity(horizon);
    markov.push(model.d().clone());
    let mut ca = model.c().clone();
    for k in 0..horizon {
        gamma.view_mut((k * ny, 0), (ny, nx)).copy_from(&ca);
        if k + 1 < horizon {
            markov.push(&ca * model.b());
        }
        ca = &ca * model.a();
    }
    for row in 0..horizon {
        for col in 0..=row {
            toeplitz
                .view_mut((row * ny, col * nu), (ny, nu))
                .copy_from(&markov[row - col]);
        }
    }
    Ok(StructuralMatrices { gamma, toeplitz })
}

/// Euclidean norm of the difference between the noiseless outputs of two plants
/// driven from the same initial state by the same input.
pub fn similarity_gap(
    member: &StateSpaceModel,
    nominal: &StateSpaceModel,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
) -> Result<f64> {
    if member.n_x() != nominal.n_x() || member.n_u() != nominal.n_u() || member.n_y() != nominal.n_y() {
        return Err(invalid("models must share dimensions"));
    }
    let a = simulate(member, x0, u)?;
    let b = simulate(nominal, x0, u)?;
    Ok(stack_rows(&(a.y - b.y)).norm())
}
