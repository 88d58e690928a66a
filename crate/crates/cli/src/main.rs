use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use darcylab::config::ExperimentConfig;
use darcylab::experiments::{self, Gate, Record, Status};
use darcylab::io::{cell_file, flow_file};
use darcylab::stokes;
use darcylab::{Error, Result};

#[derive(Parser)]
#[command(name = "darcylab", version, about = "Stokes flow in perforated domains: correctors, Darcy limit, regularity sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the unit-cell problem and write correctors and permeability.
    Cell(Common),
    /// Solve the Stokes problem on Q_R for one epsilon and write the fields.
    Solve(Common),
    /// Check the solver against the dense oracle on a small grid.
    Verify(Common),
    /// Full sweep: regularity, compactness and W^{1,q} studies.
    Sweep(Common),
    /// Two-scale errors against the Darcy limit.
    Compactness(Common),
    /// W^{1,q} ratios on the torus.
    Wkp(Common),
    /// Recompute gates and the report from an existing CSV.
    Report {
        #[command(flatten)]
        common: Common,
        /// CSV to read; defaults to the configured sweep CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replace the epsilon list with this single value.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the unit-cell resolution.
    #[arg(long)]
    resolution: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(e) = self.epsilon {
            cfg.sweep.epsilons = vec![e];
        }
        if let Some(n) = self.resolution {
            cfg.geometry.resolution = n;
        }
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn log_gates(gates: &[Gate]) -> bool {
    for g in gates {
        match g.status {
            Status::Pass => info!("PASS {}: {}", g.name, g.detail),
            Status::Fail => error!("FAIL {}: {}", g.name, g.detail),
            Status::NoData => info!("---- {}: no data", g.name),
        }
    }
    experiments::all_passed(gates)
}

fn emit(records: &[Record], cfg: &ExperimentConfig, stem: &str) -> Result<bool> {
    std::fs::create_dir_all(&cfg.output.dir)?;
    let (csv, report) = if stem == "sweep" {
        (cfg.csv_path(), cfg.report_path())
    } else {
        (cfg.output.dir.join(format!("{stem}.csv")), cfg.output.dir.join(format!("{stem}.md")))
    };
    let gates = experiments::write_outputs(records, cfg, &csv, &report)?;
    info!("wrote {} and {}", csv.display(), report.display());
    Ok(log_gates(&gates))
}

fn cell(cfg: &ExperimentConfig) -> Result<bool> {
    let prep = experiments::prepare(cfg)?;
    let path = cfg.output.dir.join("cell.txt");
    cell_file(&prep.cell).write(&path)?;
    info!("K_avg = {}", prep.cell.k_avg);
    info!("wrote {}", path.display());
    Ok(true)
}

fn solve(cfg: &ExperimentConfig) -> Result<bool> {
    let mask = cfg.unit_cell()?;
    let eps = cfg.sweep.epsilons[0];
    let dom = experiments::box_domain(cfg, &mask, eps)?;
    let sys = stokes::assemble(&dom, cfg.sweep.mu, eps)?;
    let state = stokes::solve(&sys, &cfg.forcing.sample_faces(&dom.grid), cfg.solver.options())?;
    let path = cfg.output.dir.join(format!("flow_eps_{eps}.txt"));
    flow_file(&state, &dom).write(&path)?;
    info!(
        "{} iterations, momentum residual {:e}, divergence residual {:e}",
        state.stats.outer_iterations, state.stats.momentum_residual, state.stats.divergence_residual
    );
    info!("wrote {}", path.display());
    Ok(state.stats.divergence_residual <= cfg.sweep.gates.divergence_tol)
}

fn report(cfg: &ExperimentConfig, csv: Option<&Path>) -> Result<bool> {
    let path = csv.map(Path::to_path_buf).unwrap_or_else(|| cfg.csv_path());
    let records = experiments::read_csv(&path)?;
    let out = cfg.report_path();
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&out, experiments::report(&records, cfg))?;
    info!("wrote {}", out.display());
    Ok(log_gates(&experiments::evaluate_gates(&records, &cfg.sweep.gates)))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Cell(c) => cell(&c.load()?),
        Command::Solve(c) => solve(&c.load()?),
        Command::Verify(c) => {
            let cfg = c.load()?;
            emit(&experiments::verify(&cfg)?, &cfg, "verify")
        }
        Command::Sweep(c) => {
            let cfg = c.load()?;
            emit(&experiments::run(&cfg, experiments::Parts::ALL)?, &cfg, "sweep")
        }
        Command::Compactness(c) => {
            let cfg = c.load()?;
            emit(&experiments::compactness_study(&cfg)?, &cfg, "compactness")
        }
        Command::Wkp(c) => {
            let cfg = c.load()?;
            emit(&experiments::wkp_ratio_study(&cfg)?, &cfg, "wkp")
        }
        Command::Report { common, csv } => report(&common.load()?, csv.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            if let Error::Io(_) = e {
                error!("check the output directory and input paths");
            }
            ExitCode::from(2)
        }
    }
}
