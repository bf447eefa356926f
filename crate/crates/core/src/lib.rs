//! Data-enabled predictive control (DeePC) with federated output fusion.
//!
//! The crate is `no_std` and only needs `alloc`. Modules:
//!
//! - [`lti_sim`]: discrete-time LTI plants, families of similar plants, SNR-calibrated noise.
//! - [`hankel`]: Hankel matrices, persistency of excitation, past/future partition.
//! - [`federation`]: similarity weights, fused predictors, bias and dispersion bounds.
//! - [`qp`]: dense convex QP solver (null-space equality solver + primal active set).
//! - [`deepc`]: condensing, single-step solve, receding-horizon closed loop.
#![no_std]

extern crate alloc;

pub mod deepc;
pub mod error;
pub mod federation;
pub mod hankel;
pub mod linalg;
pub mod lti_sim;
pub mod qp;
pub mod rng;

pub use deepc::{
    condense, deepc_step, make_oracle_blocks, predict_outputs, run_closed_loop, ClosedLoopResult, CondensedProblem,
    DeepcConfig, DeepcController, InitialWindow, ReferenceTrajectory, References, StepSolution, StepSummary,
};
pub use error::{Error, Result};
pub use federation::{
    advantage_condition, asymptotic_bound, compute_weights, dispersion, dispersion_bound, fuse_outputs,
    hankel_distance, mean_bias_bound, Advantage, Beta, DispersionReport, FederationWeights,
};
pub use hankel::{build_hankel, is_persistently_exciting, minimum_data_length, partition, ExcitationCheck, HankelBlocks};
pub use lti_sim::{
    collect_dataset, make_family, similarity_gap, simulate, snr_noise_variance, structural_matrices, StateSpaceModel,
    SystemFamily, TrajectoryDataset,
};
pub use qp::{solve_qp, Qp, QpOptions, QpSolution, QpStatus};
