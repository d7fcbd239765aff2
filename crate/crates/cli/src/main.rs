use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgsim::experiment::{self, ExperimentConfig, SweepStatus};
use sgsim::verify::{self, Suite};
use sgsim::Error;

/// Distributed top-K SGD simulator.
#[derive(Parser)]
#[command(name = "sgsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write metrics.csv, summary.json and model.bin.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train once per step size and write sweep.csv.
    SweepLr {
        #[arg(long)]
        config: PathBuf,
        /// `a,b,c` or `start:stop:step`; defaults to 0.01:0.25:0.01.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run built-in checks and print one line per criterion.
    Verify {
        /// linalg, protocol, lemmas, toy, bounds or all.
        #[arg(long, default_value = "all")]
        suite: Suite,
    },
    /// Reshape per-epoch maxima of finished runs into one long-format CSV.
    PlotData {
        /// Run directories, each holding metrics.csv and summary.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Steps per group for runs without epochs.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_ALL_DIVERGED: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Format { .. } | Error::Io { .. } => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

/// Worker-evaluation threads from `SGSIM_THREADS`, default 1.
fn threads() -> Result<usize, Error> {
    match std::env::var("SGSIM_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config {
                field: "SGSIM_THREADS".into(),
                message: format!("expected a positive integer, got {v:?}"),
            }),
    }
}

fn load(config: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<u8, Error> {
    let cfg = load(config, seed)?;
    let dir = experiment::output_dir(&cfg, out);
    let summary = experiment::run_to_dir(&cfg, &dir, threads()?)?;
    println!(
        "{} run: {} steps, loss {} -> {}; wrote {}",
        cfg.mode.name(),
        summary.resolved.steps,
        summary.initial_loss,
        summary.final_loss,
        dir.display()
    );
    Ok(0)
}

fn sweep(config: &Path, grid: Option<&str>, out: Option<&Path>, seed: Option<u64>) -> Result<u8, Error> {
    let cfg = load(config, seed)?;
    let grid = match grid {
        Some(g) => experiment::parse_grid(g)?,
        None => experiment::default_grid(),
    };
    let dir = experiment::output_dir(&cfg, out);
    let report = experiment::sweep_lr(&cfg, &grid, &dir, threads()?)?;
    for c in &report.cells {
        match c.status {
            SweepStatus::Ok => println!("rate {}: final loss {}", c.rate, c.final_loss.unwrap_or(f64::NAN)),
            SweepStatus::Diverged => println!(
                "rate {}: diverged ({})",
                c.rate,
                c.divergence.as_deref().unwrap_or("unknown")
            ),
        }
    }
    println!("wrote {}", dir.join("sweep.csv").display());
    match report.best_rate {
        Some(r) => {
            println!("best rate: {r}");
            Ok(0)
        }
        None => {
            eprintln!("error: every rate in the grid diverged");
            Ok(EXIT_ALL_DIVERGED)
        }
    }
}

fn verify_suite(suite: Suite) -> u8 {
    let checks = verify::run_suite(suite);
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        0
    } else {
        EXIT_FAILURE
    }
}

fn plot(runs: &[PathBuf], out: &Path, window: usize) -> Result<u8, Error> {
    let dirs: Vec<&Path> = runs.iter().map(PathBuf::as_path).collect();
    let rows = experiment::plot_data(&dirs, window, out)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, seed } => run(config, out.as_deref(), *seed),
        Command::SweepLr {
            config,
            grid,
            out,
            seed,
        } => sweep(config, grid.as_deref(), out.as_deref(), *seed),
        Command::Verify { suite } => Ok(verify_suite(*suite)),
        Command::PlotData { runs, out, window } => plot(runs, out, *window),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
