//! Monte Carlo harness, CSV output and configuration for federated DeePC experiments.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;

pub use config::ExperimentConfig;
pub use experiment::{
    bounds_diagnostics, run_case_study, run_single, select_optimal_lambda, sweep_m, BoundsRecord, Controller,
    MSweepResult, OptimalLambda, RunRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("malformed configuration: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Core(#[from] fdeepc_core::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] fdeepc_core::Error),
    #[error("trajectory shape {found:?} does not match {expected:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("no persistently exciting input after {0} draws")]
    Excitation(usize),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}
