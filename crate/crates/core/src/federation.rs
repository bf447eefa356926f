//! Similarity weights, federated output fusion, and the bias/dispersion bound calculators.
//!
//! Weights are a softmax over `−β·ΔH`, where `ΔH` is the spectral-norm distance
//! between a member's output Hankel and the nominal one. The nominal system is
//! always index 0, and the softmax normalizes over all `M` members.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::hankel::{build_hankel, partition, HankelBlocks};
use crate::linalg::{spectral_norm, stack_rows};
use crate::lti_sim::TrajectoryDataset;

/// Softmax sharpness. `Infinite` selects the closest dataset(s) exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Finite(f64),
    Infinite,
}

impl Beta {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Beta::Infinite)
    }
}

impl From<f64> for Beta {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            Beta::Infinite
        } else {
            Beta::Finite(v)
        }
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Beta::Finite(b) => write!(f, "{b}"),
            Beta::Infinite => f.write_str("inf"),
        }
    }
}

/// Normalized fusion weights together with the distances they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationWeights {
    alpha: Vec<f64>,
    beta: Beta,
    distances: Vec<f64>,
}

impl FederationWeights {
    /// Weight vector selecting the nominal dataset only.
    pub fn nominal_only(m: usize) -> Self {
        let mut alpha = alloc::vec![0.0; m.max(1)];
        alpha[0] = 1.0;
        Self {
            distances: alloc::vec![0.0; alpha.len()],
            alpha,
            beta: Beta::Infinite,
        }
    }

    /// Explicit weights; they must be non-negative and sum to one.
    pub fn from_alpha(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(invalid("weights must not be empty"));
        }
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid("weights must lie in [0, 1]"));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid(alloc::format!("weights sum to {sum}, not 1")));
        }
        Ok(Self {
            distances: alloc::vec![f64::NAN; alpha.len()],
            alpha,
            beta: Beta::Finite(f64::NAN),
        })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn beta(&self) -> Beta {
        self.beta
    }
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }
    pub fn len(&self) -> usize {
        self.alpha.len()
    }
    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
    /// Largest weight among the non-nominal members (0 when `M = 1`).
    pub fn max_other(&self) -> f64 {
        self.alpha[1..].iter().copied().fold(0.0, f64::max)
    }
}

/// `‖H_L(y_i) − H_L(y_0)‖₂`.
pub fn hankel_distance(y_i: &DMatrix<f64>, y_0: &DMatrix<f64>, depth: usize) -> Result<f64> {
    if y_i.shape() != y_0.shape() {
        return Err(mismatch(
            "output trajectories",
            alloc::format!("{}x{}", y_0.nrows(), y_0.ncols()),
            alloc::format!("{}x{}", y_i.nrows(), y_i.ncols()),
        ));
    }
    Ok(spectral_norm(&build_hankel(&(y_i - y_0), depth)?))
}

/// Hankel distances of every dataset's noisy output to the nominal (index 0) one.
pub fn dataset_distances(datasets: &[TrajectoryDataset], depth: usize) -> Result<Vec<f64>> {
    let nominal = &datasets.first().ok_or_else(|| invalid("no datasets"))?.y_noisy;
    datasets
        .iter()
        .map(|d| hankel_distance(&d.y_noisy, nominal, depth))
        .collect()
}

/// Softmax of `−β·distances`, shifted by the minimum distance for overflow safety.
pub fn compute_weights(distances: &[f64], beta: Beta) -> Result<FederationWeights> {
    if distances.is_empty() {
        return Err(invalid("distances must not be empty"));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(invalid("distances must be finite"));
    }
    let dmin = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = match beta {
        Beta::Infinite => distances.iter().map(|&d| if d == dmin { 1.0 } else { 0.0 }).collect(),
        Beta::Finite(b) => {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(invalid(alloc::format!("beta must be non-negative, got {b}")));
            }
            distances.iter().map(|&d| libm::exp(-b * (d - dmin))).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(FederationWeights {
        alpha: raw.iter().map(|w| w / total).collect(),
        beta,
        distances: distances.to_vec(),
    })
}

fn check_shared_input(datasets: &[TrajectoryDataset]) -> Result<&TrajectoryDataset> {
    let first = datasets.first().ok_or_else(|| invalid("no datasets"))?;
    for d in &datasets[1..] {
        if d.u != first.u {
            return Err(invalid(alloc::format!(
                "dataset {} was not collected with the shared input sequence",
                d.system_index
            )));
        }
        if d.y_noisy.shape() != first.y_noisy.shape() {
            return Err(mismatch(
                "output shape",
                alloc::format!("{}x{}", first.y_noisy.nrows(), first.y_noisy.ncols()),
                alloc::format!("{}x{}", d.y_noisy.nrows(), d.y_noisy.ncols()),
            ));
        }
    }
    Ok(first)
}

/// `Σ α_i y_i` over the noisy outputs.
pub fn fuse_outputs(datasets: &[TrajectoryDataset], weights: &FederationWeights) -> Result<DMatrix<f64>> {
    let first = check_shared_input(datasets)?;
    if weights.len() != datasets.len() {
        return Err(mismatch("weight count", datasets.len(), weights.len()));
    }
    let mut fused = DMatrix::zeros(first.y_noisy.nrows(), first.y_noisy.ncols());
    for (d, &a) in datasets.iter().zip(weights.alpha()) {
        fused += &d.y_noisy * a;
    }
    Ok(fused)
}

/// Federated predictor blocks: shared input Hankel, fused output Hankel.
pub fn federated_blocks(
    datasets: &[TrajectoryDataset],
    weights: &FederationWeights,
    t_ini: usize,
    horizon: usize,
) -> Result<HankelBlocks> {
    let fused = fuse_outputs(datasets, weights)?;
    partition(&datasets[0].u, &fused, t_ini, horizon)
}

/// Stacked noiseless deviations `ȳ_i − ȳ_0` (entry 0 is zero).
pub fn clean_deviations(datasets: &[TrajectoryDataset]) -> Result<Vec<DVector<f64>>> {
    let first = check_shared_input(datasets)?;
    let nominal = stack_rows(&first.y_clean);
    Ok(datasets.iter().map(|d| stack_rows(&d.y_clean) - &nominal).collect())
}

/// `Σ_{i≥1} α_i ε_i`, the bound on the distance between the fused mean and the nominal noiseless output.
pub fn mean_bias_bound(epsilons: &[f64], weights: &FederationWeights) -> Result<f64> {
    if epsilons.len() != weights.len() {
        return Err(mismatch("epsilon count", weights.len(), epsilons.len()));
    }
    Ok(weights.alpha()[1..]
        .iter()
        .zip(&epsilons[1..])
        .map(|(a, e)| a * e)
        .sum())
}

/// `(1/M) Σ_{i≥1} ε_i`, the uniform-weight limit as `M` grows.
pub fn asymptotic_bound(epsilons: &[f64]) -> f64 {
    if epsilons.is_empty() {
        return 0.0;
    }
    epsilons[1..].iter().sum::<f64>() / epsilons.len() as f64
}

/// Largest singular values of the self and cross dissimilarity outer products.
///
/// Both are rank one, so `ρ(ΔᵢΔᵢᵀ) = ‖Δᵢ‖²` and `ρ(ΔᵢΔⱼᵀ) = ‖Δᵢ‖‖Δⱼ‖`.
pub fn dissimilarity_spectra(delta_ys: &[DVector<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let norms: Vec<f64> = delta_ys.iter().map(|d| d.norm()).collect();
    let m = norms.len();
    let rho_self = norms.iter().map(|n| n * n).collect();
    let rho_cross = DMatrix::from_fn(m, m, |i, j| norms[i] * norms[j]);
    (rho_self, rho_cross)
}

/// Verdict of the sufficient condition for a smaller dispersion than nominal-only data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advantage {
    /// The sufficient condition holds, so `‖Ω‖₂ < σ₀²`.
    Holds,
    /// The condition does not hold; no advantage is certified.
    NotCertified,
    /// `α₀ = 1`: the scheme is plain DeePC on the nominal data.
    StandardDeepc,
}

impl Advantage {
    pub fn holds(self) -> bool {
        self == Advantage::Holds
    }
}

/// Second-moment matrix of the fused trajectory around the nominal noiseless one, with its bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionReport {
    pub omega: DMatrix<f64>,
    pub omega_norm: f64,
    pub bound: f64,
    /// `σ₀²`, the dispersion when only nominal data are used.
    pub nominal_only_norm: f64,
    pub advantage: Advantage,
}

fn check_lengths(m: usize, weights: &FederationWeights, variances: &[f64]) -> Result<()> {
    if weights.len() != m {
        return Err(mismatch("weight count", m, weights.len()));
    }
    if variances.len() != m {
        return Err(mismatch("variance count", m, variances.len()));
    }
    if variances.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("variances must be non-negative"));
    }
    Ok(())
}

/// Assemble `Ω = Σ αᵢ² ΔᵢΔᵢᵀ + Σ_{i≠j} αᵢαⱼ ΔᵢΔⱼᵀ + Σ αᵢ² σᵢ² I` (indices of Δ from 1).
///
/// The cross sum runs over ordered pairs, so each unordered pair contributes
/// `αᵢαⱼ(ΔᵢΔⱼᵀ + ΔⱼΔᵢᵀ)`.
pub fn dispersion(
    delta_ys: &[DVector<f64>],
    weights: &FederationWeights,
    variances: &[f64],
) -> Result<DispersionReport> {
    let m = delta_ys.len();
    if m == 0 {
        return Err(invalid("no trajectories"));
    }
    check_lengths(m, weights, variances)?;
    let n = delta_ys[0].len();
    if delta_ys.iter().any(|d| d.len() != n) {
        return Err(invalid("deviation vectors must share a length"));
    }
    let alpha = weights.alpha();
    let mut omega = DMatrix::zeros(n, n);
    for i in 1..m {
        omega.ger(alpha[i] * alpha[i], &delta_ys[i], &delta_ys[i], 1.0);
        for j in 1..m {
            if j != i {
                omega.ger(alpha[i] * alpha[j], &delta_ys[i], &delta_ys[j], 1.0);
            }
        }
    }
    let noise: f64 = alpha.iter().zip(variances).map(|(a, v)| a * a * v).sum();
    for k in 0..n {
        omega[(k, k)] += noise;
    }
    let omega = (&omega + omega.transpose()) * 0.5;
    let (rho_self, rho_cross) = dissimilarity_spectra(delta_ys);
    Ok(DispersionReport {
        omega_norm: spectral_norm(&omega),
        omega,
        bound: dispersion_bound(&rho_self, &rho_cross, weights, variances)?,
        nominal_only_norm: variances[0],
        advantage: advantage_condition(&rho_self, &rho_cross, weights, variances)?,
    })
}

/// `α₀²σ₀² + Σ_{i≥1} αᵢ²(ρᵢ + σᵢ²) + Σ_{i≠j≥1} αᵢαⱼ ρᵢⱼ`.
pub fn dispersion_bound(
    rho_self: &[f64],
    rho_cross: &DMatrix<f64>,
    weights: &FederationWeights,
    variances: &[f64],
) -> Result<f64> {
    let m = rho_self.len();
    check_lengths(m, weights, variances)?;
    if rho_cross.shape() != (m, m) {
        return Err(mismatch("rho_cross", alloc::format!("{m}x{m}"), alloc::format!("{:?}", rho_cross.shape())));
    }
    let a = weights.alpha();
    let mut bound = a[0] * a[0] * variances[0];
    for i in 1..m {
        bound += a[i] * a[i] * (rho_self[i] + variances[i]);
        for j in 1..m {
            if j != i {
                bound += a[i] * a[j] * rho_cross[(i, j)];
            }
        }
    }
    Ok(bound)
}

/// Sufficient condition under which the fused data disperse less than nominal-only data.
///
/// With identical variances the noise-free normalization `1 − Σαᵢ²` is used,
/// otherwise the general form normalized by `1 − α₀²`.
pub fn advantage_condition(
    rho_self: &[f64],
    rho_cross: &DMatrix<f64>,
    weights: &FederationWeights,
    variances: &[f64],
) -> Result<Advantage> {
    let m = rho_self.len();
    check_lengths(m, weights, variances)?;
    let a = weights.alpha();
    if a[0] >= 1.0 || m == 1 {
        return Ok(Advantage::StandardDeepc);
    }
    let sigma0 = variances[0];
    let identical = variances.iter().all(|&v| v == sigma0);
    let cross: f64 = (1..m)
        .flat_map(|i| (1..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| 2.0 * a[i] * a[j] * rho_cross[(i, j)])
        .sum();
    let lhs = if identical {
        let denom = 1.0 - a.iter().map(|x| x * x).sum::<f64>();
        if denom <= 0.0 {
            return Ok(Advantage::NotCertified);
        }
        let own: f64 = (1..m).map(|i| a[i] * a[i] * rho_self[i]).sum();
        (own + cross) / denom
    } else {
        let denom = 1.0 - a[0] * a[0];
        let own: f64 = (1..m).map(|i| a[i] * a[i] * (rho_self[i] + variances[i])).sum();
        (own + 2.0 * cross) / denom
    };
    Ok(if lhs < sigma0 {
        Advantage::Holds
    } else {
        Advantage::NotCertified
    })
}
