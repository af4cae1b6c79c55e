//! `spinflow`: runs the dynamics, convergence and validation scenarios.

mod artifacts;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use spinflow::config::{ConfigFile, ExperimentConfig, Scenario};
use spinflow::experiment::{conv_dt, conv_dx, dynamics, ConvergenceStudy};
use spinflow::report::run_validation;
use spinflow::{Error, Model, Result};

use artifacts::{OutputDir, PLOT_CONVERGENCE, PLOT_DYNAMICS};

#[derive(Parser)]
#[command(name = "spinflow", version, about = "Metropolis-Hastings, Langevin and heat flow dynamics of spin chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// M-H, SDE and heat flow from one initial condition.
    Dynamics(Common),
    /// Strong convergence of M-H to the SDE as dt shrinks.
    ConvDt(Common),
    /// Convergence of M-H to the heat flow as the lattice refines.
    ConvDx(Common),
    /// Statistical validators; exits with 4 if any fails.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// `xy` or `heisenberg`.
    #[arg(long)]
    model: Option<Model>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

fn resolve(scenario: Scenario, c: &Common) -> Result<ExperimentConfig> {
    let file = match &c.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut cfg = ExperimentConfig::from_file(scenario, &file)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(r) = c.realizations {
        cfg.realizations = r;
        if scenario == Scenario::Validate {
            cfg.validate.energy_realizations = r;
        }
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(m) = c.model {
        cfg.model = m;
    }
    cfg.check()?;
    Ok(cfg)
}

fn csv_of(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn run_dynamics(cfg: &ExperimentConfig) -> Result<bool> {
    let run = dynamics(cfg)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    for (name, rec) in [("mh", &run.mh), ("sde", &run.sde), ("pde", &run.pde)] {
        out.write(&format!("{name}_snapshots.csv"), &csv_of(|b| rec.write_snapshots_csv(b))?)?;
        out.write(&format!("{name}_scalars.csv"), &csv_of(|b| rec.write_scalars_csv(b))?)?;
    }
    let mut errors = String::from("t,mh_vs_pde,sde_vs_pde\n");
    for ((t, a), b) in run.mh_vs_pde.times.iter().zip(&run.mh_vs_pde.values).zip(&run.sde_vs_pde.values) {
        let _ = writeln!(errors, "{},{},{}", fmt(*t), fmt(*a), fmt(*b));
    }
    out.write("errors.csv", errors.as_bytes())?;
    out.write("plot_dynamics.py", PLOT_DYNAMICS.as_bytes())?;
    let mid = run.mh_vs_pde.values.len() / 2;
    println!(
        "dynamics {}: M={} eps={:.4} rms vs heat flow at t={:.3}: M-H {:.4}, SDE {:.4}",
        cfg.model.name(),
        run.params.sites,
        run.params.eps,
        run.mh_vs_pde.times[mid],
        run.mh_vs_pde.values[mid],
        run.sde_vs_pde.values[mid],
    );
    let dir = out.finish(cfg)?;
    info!("wrote {}", dir.display());
    Ok(true)
}

fn write_study(cfg: &ExperimentConfig, study: &ConvergenceStudy, label: &str) -> Result<bool> {
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write("convergence.csv", study.to_csv().as_bytes())?;
    out.write_json("fit.json", study)?;
    out.write("plot_convergence.py", PLOT_CONVERGENCE.as_bytes())?;
    print!("{}", study.to_csv());
    println!(
        "{label} {}: slope {:.3} (r^2 {:.3}) over {} realizations",
        cfg.model.name(),
        study.fit.slope,
        study.fit.r_squared,
        cfg.realizations
    );
    let dir = out.finish(cfg)?;
    info!("wrote {}", dir.display());
    Ok(true)
}

fn run_validate(cfg: &ExperimentConfig) -> Result<bool> {
    let rep = run_validation(cfg)?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let text = rep.to_text();
    out.write_json("validation.json", &rep)?;
    out.write("validation.txt", text.as_bytes())?;
    print!("{text}");
    out.finish(cfg)?;
    Ok(rep.pass)
}

fn fmt(x: f64) -> String {
    spinflow::lattice::fmt_f64(x)
}

fn execute(cli: Cli) -> Result<bool> {
    let (scenario, common) = match &cli.command {
        Command::Dynamics(c) => (Scenario::Dynamics, c),
        Command::ConvDt(c) => (Scenario::ConvDt, c),
        Command::ConvDx(c) => (Scenario::ConvDx, c),
        Command::Validate(c) => (Scenario::Validate, c),
    };
    let cfg = resolve(scenario, common)?;
    info!("{} seed {} -> {}", scenario.name(), cfg.seed, cfg.output_dir.display());
    match scenario {
        Scenario::Dynamics => run_dynamics(&cfg),
        Scenario::ConvDt => write_study(&cfg, &conv_dt(&cfg)?, "conv-dt"),
        Scenario::ConvDx => write_study(&cfg, &conv_dx(&cfg)?, "conv-dx"),
        Scenario::Validate => run_validate(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
