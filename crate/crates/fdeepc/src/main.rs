use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fdeepc::config::parse_beta;
use fdeepc::experiment::draw_excitation;
use fdeepc::{output, ExperimentConfig};
use fdeepc_core::hankel::is_persistently_exciting;
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(name = "fdeepc", version, about = "Federated DeePC Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    /// Number of systems in the federation, nominal included.
    #[arg(long)]
    m: Option<usize>,
    /// Similarity sharpness: a non-negative float or `inf`.
    #[arg(long)]
    beta: Option<String>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// λ_g sweep with records, summary, optimal λ_g and federation diagnostics.
    CaseStudy(Common),
    /// λ_g sweep with records and summary only.
    SweepLambda(Common),
    /// Repeat the λ_g sweep for several family sizes.
    SweepM {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "5,15,35,55")]
        m_list: Vec<usize>,
    },
    /// Federation weights, bias and dispersion bounds per run.
    Bounds(Common),
    /// Persistency-of-excitation check of a signal (or of the configured excitation).
    PeCheck {
        #[command(flatten)]
        common: Common,
        /// Headerless CSV, one row per sample, one column per channel.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Hankel depth; defaults to T_ini + N + n_x.
        #[arg(long)]
        order: Option<usize>,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(r) = c.runs {
        cfg.n_runs = r;
    }
    if let Some(m) = c.m {
        cfg.m = m;
    }
    if let Some(b) = &c.beta {
        cfg.beta = parse_beta(b)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_signal(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.iter().map(str::parse).collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        bail!("{} must hold a non-empty rectangular table of numbers", path.display());
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::CaseStudy(c) => {
            let cfg = load(&c)?;
            fs::create_dir_all(&c.out)?;
            let records = fdeepc::run_case_study(&cfg, c.threads)?;
            output::write_records(create(&c.out, "records.csv")?, &records)?;
            output::write_summary(create(&c.out, "summary.csv")?, &records)?;
            let optimal = fdeepc::select_optimal_lambda(&records);
            output::write_optimal(create(&c.out, "optimal_lambda.csv")?, cfg.m, &optimal)?;
            let bounds = fdeepc::bounds_diagnostics(&cfg, c.threads)?;
            output::write_bounds(create(&c.out, "bounds.csv")?, &bounds)?;
            for o in &optimal {
                println!("{:<10} optimal lambda_g {:.4e}  mean rmse_y {:.4e}", o.controller, o.lambda_g, o.mean_rmse_y);
            }
        }
        Command::SweepLambda(c) => {
            let cfg = load(&c)?;
            fs::create_dir_all(&c.out)?;
            let records = fdeepc::run_case_study(&cfg, c.threads)?;
            output::write_records(create(&c.out, "records.csv")?, &records)?;
            output::write_summary(create(&c.out, "summary.csv")?, &records)?;
        }
        Command::SweepM { common, m_list } => {
            let cfg = load(&common)?;
            if m_list.is_empty() {
                bail!("--m-list must not be empty");
            }
            fs::create_dir_all(&common.out)?;
            let sweep = fdeepc::sweep_m(&cfg, &m_list, common.threads)?;
            output::write_m_sweep(
                create(&common.out, "sweep_m_records.csv")?,
                create(&common.out, "sweep_m_summary.csv")?,
                &sweep,
            )?;
        }
        Command::Bounds(c) => {
            let cfg = load(&c)?;
            fs::create_dir_all(&c.out)?;
            let bounds = fdeepc::bounds_diagnostics(&cfg, c.threads)?;
            output::write_bounds(create(&c.out, "bounds.csv")?, &bounds)?;
        }
        Command::PeCheck { common, input, order } => {
            let cfg = load(&common)?;
            let signal = match &input {
                Some(p) => read_signal(p)?,
                None => draw_excitation(&cfg, 0)?,
            };
            let order = order.unwrap_or(cfg.t_ini + cfg.n + cfg.plant_model()?.n_x());
            let check = is_persistently_exciting(&signal, order)?;
            println!(
                "order {order}: rank {} of {} -> {}",
                check.rank,
                check.required_rank,
                if check.persistently_exciting { "persistently exciting" } else { "not persistently exciting" }
            );
            if !check.persistently_exciting {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
