//! Monte Carlo case study: oracle, standard and federated DeePC over a λ_g grid.

use std::collections::BTreeMap;
use std::fmt;

use fdeepc_core::deepc::{make_oracle_blocks, run_closed_loop, ClosedLoopResult, ReferenceTrajectory};
use fdeepc_core::federation::{
    clean_deviations, compute_weights, dataset_distances, dispersion, federated_blocks, mean_bias_bound,
    asymptotic_bound, Advantage, FederationWeights,
};
use fdeepc_core::hankel::{is_persistently_exciting, partition, HankelBlocks};
use fdeepc_core::lti_sim::{collect_dataset, make_family, TrajectoryDataset};
use fdeepc_core::rng::{self, purpose};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::metrics::{mean, rms_tracking, rmse_vs_oracle};
use crate::{ExperimentConfig, ExperimentError};

/// Excitation draws tried per run before giving up.
const MAX_EXCITATION_DRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Controller {
    Standard,
    Federated,
    Oracle,
}

impl Controller {
    pub const ALL: [Controller; 3] = [Controller::Standard, Controller::Federated, Controller::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            Controller::Standard => "standard",
            Controller::Federated => "federated",
            Controller::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Verdict column of the records file.
pub fn advantage_label(a: Advantage) -> &'static str {
    match a {
        Advantage::Holds => "holds",
        Advantage::NotCertified => "not_certified",
        Advantage::StandardDeepc => "standard",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub lambda_g: f64,
    pub m: usize,
    pub controller: Controller,
    pub rmse_u: f64,
    pub rmse_y: f64,
    pub rms_y: f64,
    pub alpha0: f64,
    pub alpha_max_other: f64,
    pub bias_bound: f64,
    pub disp_norm: f64,
    pub disp_bound: f64,
    pub advantage: Advantage,
    /// Largest applied input magnitude; not part of the CSV schema.
    pub max_abs_u: f64,
    /// False if some step was not solved to optimality (metrics are then NaN).
    pub completed: bool,
}

/// Federation diagnostics of one run, independent of λ_g.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRecord {
    pub run: usize,
    pub m: usize,
    pub alpha0: f64,
    pub alpha_max_other: f64,
    pub bias_bound: f64,
    pub asymptotic_bound: f64,
    pub disp_norm: f64,
    pub disp_bound: f64,
    pub nominal_variance: f64,
    pub advantage: Advantage,
}

/// Everything a run needs before the closed loops.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub run: usize,
    pub datasets: Vec<TrajectoryDataset>,
    pub weights: FederationWeights,
    pub oracle_blocks: HankelBlocks,
    pub standard_blocks: HankelBlocks,
    pub federated_blocks: HankelBlocks,
    pub bounds: BoundsRecord,
}

/// Draw the excitation of one run, redrawing until it is persistently exciting.
pub fn draw_excitation(config: &ExperimentConfig, run: usize) -> Result<DMatrix<f64>, ExperimentError> {
    let plant = config.plant_model()?;
    let order = config.t_ini + config.n + plant.n_x();
    for attempt in 0..MAX_EXCITATION_DRAWS {
        let mut rng = rng::stream(config.master_seed, &[purpose::EXCITATION, run as u64, attempt as u64]);
        let u = rng::standard_normal_matrix(&mut rng, config.t, plant.n_u());
        match is_persistently_exciting(&u, order) {
            Ok(c) if c.persistently_exciting => return Ok(u),
            Ok(c) => log::info!("run {run}: excitation draw {attempt} has rank {} < {}, redrawing", c.rank, c.required_rank),
            Err(e) => return Err(e.into()),
        }
    }
    Err(ExperimentError::Excitation(MAX_EXCITATION_DRAWS))
}

pub fn prepare_run(config: &ExperimentConfig, run: usize) -> Result<RunSetup, ExperimentError> {
    let plant = config.plant_model()?;
    let x0 = config.initial_state();
    let (t_ini, n) = (config.t_ini, config.n);
    let u = draw_excitation(config, run)?;

    let family = make_family(&plant, &config.delta_matrix()?, config.m, config.scale)?;
    let seed = rng::derive_seed(config.master_seed, &[purpose::NOISE, run as u64]);
    let datasets = collect_dataset(&family, &x0, &u, config.snr_db, seed)?;

    let oracle_blocks = make_oracle_blocks(&plant, &x0, &u, t_ini, n)?;
    let standard_blocks = partition(&u, &datasets[0].y_noisy, t_ini, n)?;
    let distances = dataset_distances(&datasets, t_ini + n)?;
    let weights = compute_weights(&distances, config.beta)?;
    let fed_blocks = federated_blocks(&datasets, &weights, t_ini, n)?;

    let deltas = clean_deviations(&datasets)?;
    let eps: Vec<f64> = deltas.iter().map(|d| d.norm()).collect();
    let variances: Vec<f64> = datasets.iter().map(|d| d.noise_variance).collect();
    let report = dispersion(&deltas, &weights, &variances)?;
    let bounds = BoundsRecord {
        run,
        m: config.m,
        alpha0: weights.alpha()[0],
        alpha_max_other: weights.max_other(),
        bias_bound: mean_bias_bound(&eps, &weights)?,
        asymptotic_bound: asymptotic_bound(&eps),
        disp_norm: report.omega_norm,
        disp_bound: report.bound,
        nominal_variance: report.nominal_only_norm,
        advantage: report.advantage,
    };

    Ok(RunSetup {
        run,
        datasets,
        weights,
        oracle_blocks,
        standard_blocks,
        federated_blocks: fed_blocks,
        bounds,
    })
}

#[derive(Clone, Copy)]
struct Scored {
    rmse_u: f64,
    rmse_y: f64,
    rms_y: f64,
    max_abs_u: f64,
    completed: bool,
}

fn score(
    loop_: &ClosedLoopResult,
    oracle: &ClosedLoopResult,
    refs: &ReferenceTrajectory,
    t_sim: usize,
) -> Result<Scored, ExperimentError> {
    let max_abs_u = loop_.u_applied.amax();
    if !loop_.completed() || !oracle.completed() {
        return Ok(Scored {
            rmse_u: f64::NAN,
            rmse_y: f64::NAN,
            rms_y: f64::NAN,
            max_abs_u,
            completed: false,
        });
    }
    Ok(Scored {
        rmse_u: rmse_vs_oracle(&loop_.u_applied, &oracle.u_applied)?,
        rmse_y: rmse_vs_oracle(&loop_.y_realized, &oracle.y_realized)?,
        rms_y: rms_tracking(&loop_.y_realized, &refs.outputs(t_sim))?,
        max_abs_u,
        completed: true,
    })
}

/// Closed loops of one Monte Carlo run at every λ_g, in canonical order.
pub fn run_single(config: &ExperimentConfig, run: usize) -> Result<Vec<RunRecord>, ExperimentError> {
    let setup = prepare_run(config, run)?;
    let plant = config.plant_model()?;
    let x0 = config.initial_state();
    let refs = ReferenceTrajectory::zeros(plant.n_u(), plant.n_y());
    let t_sim = config.t_sim;

    let oracle = run_closed_loop(&plant, &x0, &setup.oracle_blocks, &refs, &config.deepc_config(0.0)?, t_sim)?;
    if !oracle.completed() {
        log::warn!("run {run}: oracle loop stopped early ({:?})", oracle.terminated);
    }
    let oracle_score = score(&oracle, &oracle, &refs, t_sim)?;
    let b = &setup.bounds;

    let mut out = Vec::with_capacity(config.lambda_grid.len() * 3);
    for &lambda in &config.lambda_grid {
        let dc = config.deepc_config(lambda)?;
        for controller in Controller::ALL {
            let (s, alpha0, other, bias, dn, db, adv) = match controller {
                Controller::Oracle => (
                    oracle_score,
                    1.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    Advantage::StandardDeepc,
                ),
                Controller::Standard => {
                    let cl = run_closed_loop(&plant, &x0, &setup.standard_blocks, &refs, &dc, t_sim)?;
                    let var = b.nominal_variance;
                    (score(&cl, &oracle, &refs, t_sim)?, 1.0, 0.0, 0.0, var, var, Advantage::StandardDeepc)
                }
                Controller::Federated => {
                    let cl = run_closed_loop(&plant, &x0, &setup.federated_blocks, &refs, &dc, t_sim)?;
                    (
                        score(&cl, &oracle, &refs, t_sim)?,
                        b.alpha0,
                        b.alpha_max_other,
                        b.bias_bound,
                        b.disp_norm,
                        b.disp_bound,
                        b.advantage,
                    )
                }
            };
            if !s.completed {
                log::warn!("run {run}, lambda {lambda}, {controller}: closed loop stopped early");
            }
            out.push(RunRecord {
                run,
                lambda_g: lambda,
                m: config.m,
                controller,
                rmse_u: s.rmse_u,
                rmse_y: s.rmse_y,
                rms_y: s.rms_y,
                alpha0,
                alpha_max_other: other,
                bias_bound: bias,
                disp_norm: dn,
                disp_bound: db,
                advantage: adv,
                max_abs_u: s.max_abs_u,
                completed: s.completed,
            });
        }
    }
    Ok(out)
}

fn with_pool<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

fn canonical_order(a: &RunRecord, b: &RunRecord) -> std::cmp::Ordering {
    (a.m, a.run)
        .cmp(&(b.m, b.run))
        .then(a.lambda_g.total_cmp(&b.lambda_g))
        .then(a.controller.cmp(&b.controller))
}

/// All runs of the configured experiment, sorted by run, λ_g and controller.
///
/// `threads = None` uses one worker per core. The output does not depend on the thread count.
pub fn run_case_study(config: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<RunRecord>, ExperimentError> {
    config.validate()?;
    let per_run = with_pool(threads, || {
        (0..config.n_runs)
            .into_par_iter()
            .map(|r| run_single(config, r))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let mut records: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    records.sort_by(canonical_order);
    Ok(records)
}

/// Federation diagnostics for every run, without closed loops.
pub fn bounds_diagnostics(config: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<BoundsRecord>, ExperimentError> {
    config.validate()?;
    with_pool(threads, || {
        (0..config.n_runs)
            .into_par_iter()
            .map(|r| prepare_run(config, r).map(|s| s.bounds))
            .collect::<Result<Vec<_>, _>>()
    })?
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalLambda {
    pub controller: Controller,
    pub lambda_g: f64,
    pub mean_rmse_y: f64,
}

/// Grid point minimizing the mean rmse_y of each controller; ties go to the smaller λ_g.
pub fn select_optimal_lambda(records: &[RunRecord]) -> Vec<OptimalLambda> {
    let mut groups: BTreeMap<(Controller, u64), (f64, Vec<f64>)> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.controller, r.lambda_g.to_bits()))
            .or_insert_with(|| (r.lambda_g, Vec::new()))
            .1
            .push(r.rmse_y);
    }
    let mut best: BTreeMap<Controller, OptimalLambda> = BTreeMap::new();
    for ((controller, _), (lambda_g, values)) in groups {
        let m = mean(&values);
        let candidate = OptimalLambda {
            controller,
            lambda_g,
            mean_rmse_y: m,
        };
        best.entry(controller)
            .and_modify(|cur| {
                let better = m < cur.mean_rmse_y || cur.mean_rmse_y.is_nan() && !m.is_nan();
                let tie = m == cur.mean_rmse_y && lambda_g < cur.lambda_g;
                if better || tie {
                    *cur = candidate;
                }
            })
            .or_insert(candidate);
    }
    best.into_values().collect()
}

/// Records of a single M, all λ_g, plus the per-controller optimum.
#[derive(Debug, Clone)]
pub struct MSweepResult {
    pub m: usize,
    pub records: Vec<RunRecord>,
    pub optimal: Vec<OptimalLambda>,
}

impl MSweepResult {
    /// Records of `controller` at its optimal λ_g.
    pub fn at_optimum(&self, controller: Controller) -> Vec<&RunRecord> {
        let Some(opt) = self.optimal.iter().find(|o| o.controller == controller) else {
            return Vec::new();
        };
        self.records
            .iter()
            .filter(|r| r.controller == controller && r.lambda_g == opt.lambda_g)
            .collect()
    }
}

/// Repeat the case study for each family size.
pub fn sweep_m(
    config: &ExperimentConfig,
    m_list: &[usize],
    threads: Option<usize>,
) -> Result<Vec<MSweepResult>, ExperimentError> {
    let mut seen = Vec::new();
    for &m in m_list {
        if seen.contains(&m) {
            log::warn!("duplicate M = {m} in the sweep ignored");
        } else {
            seen.push(m);
        }
    }
    seen.into_iter()
        .map(|m| {
            let cfg = ExperimentConfig { m, ..config.clone() };
            let records = run_case_study(&cfg, threads)?;
            let optimal = select_optimal_lambda(&records);
            Ok(MSweepResult { m, records, optimal })
        })
        .collect()
}
