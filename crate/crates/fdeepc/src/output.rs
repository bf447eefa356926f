//! CSV writers. Floats are written with 17 significant digits so they round-trip exactly.

use std::collections::BTreeMap;
use std::io::Write;

use crate::experiment::{advantage_label, BoundsRecord, Controller, MSweepResult, OptimalLambda, RunRecord};
use crate::metrics::Distribution;

pub const RECORDS_HEADER: [&str; 13] = [
    "run",
    "lambda_g",
    "M",
    "controller",
    "rmse_u",
    "rmse_y",
    "rms_y",
    "alpha0",
    "alpha_max_other",
    "bias_bound",
    "disp_norm",
    "disp_bound",
    "advantage",
];

/// `x` with 17 significant digits (`NaN`, `inf` and `-inf` spelled out).
pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn write_records<W: Write>(w: W, records: &[RunRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORDS_HEADER)?;
    for r in records {
        out.write_record([
            r.run.to_string(),
            float(r.lambda_g),
            r.m.to_string(),
            r.controller.to_string(),
            float(r.rmse_u),
            float(r.rmse_y),
            float(r.rms_y),
            float(r.alpha0),
            float(r.alpha_max_other),
            float(r.bias_bound),
            float(r.disp_norm),
            float(r.disp_bound),
            advantage_label(r.advantage).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

type Metric = (&'static str, fn(&RunRecord) -> f64);

const METRICS: [Metric; 3] = [
    ("rmse_u", |r| r.rmse_u),
    ("rmse_y", |r| r.rmse_y),
    ("rms_y", |r| r.rms_y),
];

/// One row per `(M, λ_g, controller, metric)`; incomplete loops are left out.
pub fn write_summary<W: Write>(w: W, records: &[RunRecord]) -> csv::Result<()> {
    let mut groups: BTreeMap<(usize, u64, Controller), (f64, Vec<&RunRecord>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.completed) {
        groups
            .entry((r.m, r.lambda_g.to_bits(), r.controller))
            .or_insert_with(|| (r.lambda_g, Vec::new()))
            .1
            .push(r);
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["M", "lambda_g", "controller", "metric", "count", "mean", "median", "q1", "q3", "iqr"])?;
    // `to_bits` orders non-negative floats correctly.
    for ((m, _, controller), (lambda, rs)) in groups {
        for (name, get) in METRICS {
            let xs: Vec<f64> = rs.iter().map(|r| get(r)).collect();
            let d = Distribution::of(&xs);
            out.write_record([
                m.to_string(),
                float(lambda),
                controller.to_string(),
                name.to_string(),
                xs.len().to_string(),
                float(d.mean),
                float(d.median),
                float(d.q1),
                float(d.q3),
                float(d.iqr()),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_optimal<W: Write>(w: W, m: usize, optimal: &[OptimalLambda]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["M", "controller", "lambda_g", "mean_rmse_y"])?;
    for o in optimal {
        out.write_record([m.to_string(), o.controller.to_string(), float(o.lambda_g), float(o.mean_rmse_y)])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-M records at each controller's optimal λ_g, followed by a summary per M.
pub fn write_m_sweep<W: Write, S: Write>(records_w: W, summary_w: S, sweep: &[MSweepResult]) -> csv::Result<()> {
    let mut at_opt: Vec<RunRecord> = Vec::new();
    for s in sweep {
        for c in Controller::ALL {
            at_opt.extend(s.at_optimum(c).into_iter().cloned());
        }
    }
    at_opt.sort_by_key(|r| (r.m, r.run, r.controller));
    write_records(records_w, &at_opt)?;

    let mut out = csv::Writer::from_writer(summary_w);
    out.write_record(["M", "controller", "lambda_g", "count", "rmse_y_mean", "rmse_y_median", "rmse_y_iqr", "rms_y_median"])?;
    for s in sweep {
        for o in &s.optimal {
            let rs: Vec<&RunRecord> = s.at_optimum(o.controller).into_iter().filter(|r| r.completed).collect();
            let rmse: Vec<f64> = rs.iter().map(|r| r.rmse_y).collect();
            let rms: Vec<f64> = rs.iter().map(|r| r.rms_y).collect();
            let d = Distribution::of(&rmse);
            out.write_record([
                s.m.to_string(),
                o.controller.to_string(),
                float(o.lambda_g),
                rmse.len().to_string(),
                float(d.mean),
                float(d.median),
                float(d.iqr()),
                float(Distribution::of(&rms).median),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_bounds<W: Write>(w: W, bounds: &[BoundsRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "run",
        "M",
        "alpha0",
        "alpha_max_other",
        "bias_bound",
        "asymptotic_bound",
        "disp_norm",
        "disp_bound",
        "nominal_variance",
        "advantage",
    ])?;
    for b in bounds {
        out.write_record([
            b.run.to_string(),
            b.m.to_string(),
            float(b.alpha0),
            float(b.alpha_max_other),
            float(b.bias_bound),
            float(b.asymptotic_bound),
            float(b.disp_norm),
            float(b.disp_bound),
            float(b.nominal_variance),
            advantage_label(b.advantage).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
