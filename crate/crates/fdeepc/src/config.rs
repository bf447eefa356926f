//! Experiment configuration and its TOML representation.
//!
//! Keys mirror the field names of [`ExperimentConfig`]; unknown keys are rejected.

use std::path::Path;

use fdeepc_core::deepc::DeepcConfig;
use fdeepc_core::federation::Beta;
use fdeepc_core::lti_sim::{presets, StateSpaceModel};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantPreset {
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PlantSpec {
    Preset(PlantPreset),
    Matrices(PlantMatrices),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantMatrices {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaPreset {
    #[serde(alias = "rotation")]
    Rotationlike,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Preset(DeltaPreset),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum BetaRepr {
    Number(f64),
    Text(String),
}

/// Parse `inf`/`infinite`/`+inf` or a non-negative float.
pub fn parse_beta(s: &str) -> Result<Beta, ConfigError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinite" | "infinity" => Ok(Beta::Infinite),
        other => {
            let v: f64 = other
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("beta must be a number or 'inf', got '{s}'")))?;
            beta_from_number(v)
        }
    }
}

fn beta_from_number(v: f64) -> Result<Beta, ConfigError> {
    if v.is_nan() || v < 0.0 {
        return Err(ConfigError::Invalid(format!("beta must be non-negative, got {v}")));
    }
    Ok(Beta::from(v))
}

fn deserialize_beta<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Beta, D::Error> {
    let repr = BetaRepr::deserialize(d)?;
    match repr {
        BetaRepr::Number(v) => beta_from_number(v),
        BetaRepr::Text(s) => parse_beta(&s),
    }
    .map_err(serde::de::Error::custom)
}

/// Zero plus 30 log-spaced points in `[1e-3, 1e2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((0..30).map(|k| 10f64.powf(-3.0 + 5.0 * k as f64 / 29.0)));
    grid
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    #[serde(rename = "delta_A")]
    pub delta_a: DeltaSpec,
    #[serde(rename = "M")]
    pub m: usize,
    pub scale: f64,
    pub snr_db: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub x0: Vec<f64>,
    #[serde(rename = "T_ini")]
    pub t_ini: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(deserialize_with = "deserialize_beta")]
    pub beta: Beta,
    pub lambda_grid: Vec<f64>,
    #[serde(rename = "T_sim")]
    pub t_sim: usize,
    pub n_runs: usize,
    pub master_seed: u64,
    pub u_bounds: Option<Vec<[f64; 2]>>,
    pub y_bounds: Option<Vec<[f64; 2]>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            plant: PlantSpec::Preset(PlantPreset::Nominal),
            delta_a: DeltaSpec::Preset(DeltaPreset::Rotationlike),
            m: 55,
            scale: 0.05,
            snr_db: 20.0,
            t: 50,
            x0: vec![1.0, 1.0],
            t_ini: 3,
            n: 3,
            q: vec![vec![1.0]],
            r: vec![vec![0.01]],
            beta: Beta::Finite(0.1),
            lambda_grid: default_lambda_grid(),
            t_sim: 50,
            n_runs: 150,
            master_seed: 0,
            u_bounds: None,
            y_bounds: None,
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(ConfigError::Invalid(format!("{name} must be a non-empty rectangular nested array")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.lambda_grid.is_empty() {
            return Err(ConfigError::Invalid("lambda_grid must not be empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(ConfigError::Invalid("lambda_grid entries must be finite and non-negative".into()));
        }
        if self.n_runs == 0 {
            return Err(ConfigError::Invalid("n_runs must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(ConfigError::Invalid("M must be at least 1".into()));
        }
        if self.t_sim == 0 {
            return Err(ConfigError::Invalid("T_sim must be at least 1".into()));
        }
        let plant = self.plant_model()?;
        let delta = self.delta_matrix()?;
        if delta.shape() != (plant.n_x(), plant.n_x()) {
            return Err(ConfigError::Invalid("delta_A must match the plant state dimension".into()));
        }
        if self.x0.len() != plant.n_x() {
            return Err(ConfigError::Invalid("x0 must match the plant state dimension".into()));
        }
        if self.t < self.t_ini + self.n {
            return Err(ConfigError::Invalid("T must be at least T_ini + N".into()));
        }
        let deepc = self.deepc_config(0.0)?;
        if deepc.n_u() != plant.n_u() || deepc.n_y() != plant.n_y() {
            return Err(ConfigError::Invalid("Q and R must match the plant output and input dimensions".into()));
        }
        Ok(())
    }

    pub fn plant_model(&self) -> Result<StateSpaceModel, ConfigError> {
        match &self.plant {
            PlantSpec::Preset(PlantPreset::Nominal) => Ok(presets::nominal()),
            PlantSpec::Matrices(m) => Ok(StateSpaceModel::new(
                matrix("A", &m.a)?,
                matrix("B", &m.b)?,
                matrix("C", &m.c)?,
                matrix("D", &m.d)?,
            )?),
        }
    }

    pub fn delta_matrix(&self) -> Result<DMatrix<f64>, ConfigError> {
        let n = self.plant_model()?.n_x();
        match &self.delta_a {
            DeltaSpec::Preset(DeltaPreset::Identity) => Ok(DMatrix::identity(n, n)),
            DeltaSpec::Preset(DeltaPreset::Rotationlike) => {
                if n != 2 {
                    return Err(ConfigError::Invalid("the rotationlike delta_A needs a two-state plant".into()));
                }
                Ok(presets::delta_a_rotation())
            }
            DeltaSpec::Matrix(rows) => matrix("delta_A", rows),
        }
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x0)
    }

    pub fn deepc_config(&self, lambda_g: f64) -> Result<DeepcConfig, ConfigError> {
        let mut c = DeepcConfig::new(matrix("Q", &self.q)?, matrix("R", &self.r)?, lambda_g, self.t_ini, self.n)?;
        if let Some(b) = &self.u_bounds {
            c = c.with_u_bounds(b.iter().map(|[lo, hi]| (*lo, *hi)).collect())?;
        }
        if let Some(b) = &self.y_bounds {
            c = c.with_y_bounds(b.iter().map(|[lo, hi]| (*lo, *hi)).collect())?;
        }
        Ok(c)
    }
}
