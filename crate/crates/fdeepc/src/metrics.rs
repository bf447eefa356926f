//! Closed-loop performance indicators and summary statistics.

use nalgebra::DMatrix;

use crate::ExperimentError;

fn rms_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64, ExperimentError> {
    if a.shape() != b.shape() {
        return Err(ExperimentError::Shape {
            expected: b.shape(),
            found: a.shape(),
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Root mean squared deviation from the oracle closed loop, averaged over all entries.
pub fn rmse_vs_oracle(traj: &DMatrix<f64>, oracle: &DMatrix<f64>) -> Result<f64, ExperimentError> {
    rms_difference(traj, oracle)
}

/// Root mean squared tracking error against the reference.
pub fn rms_tracking(traj: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64, ExperimentError> {
    rms_difference(traj, reference)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linearly interpolated sample quantile (the "type 7" rule).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Distribution {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            median: median(xs),
            q1: quantile(xs, 0.25),
            q3: quantile(xs, 0.75),
        }
    }
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}
