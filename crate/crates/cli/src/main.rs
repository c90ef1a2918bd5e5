//! `kdesign`: batch front end for frame-potential simulations, spectra and fits.

mod config;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kdesign::fitting::TwoStepOptions;
use kdesign::theory::TheoryContext;

use config::{ExperimentConfig, Mode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] kdesign::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Budget(_) => "budget",
            CliError::Data(_) => "data",
            CliError::Core(kdesign::Error::Budget(_)) => "budget",
            CliError::Core(_) => "computation",
            CliError::Io(_) => "io",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind() {
            "config" => 2,
            "budget" => 3,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "kdesign", version, about = "Frame potentials, replica channels and spectra of brickwork circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a case_a_* or case_b_* configuration and write Δ₂ series.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Subleading eigenvalue of the moment channel for every sweep point.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print closed-form reference values as JSON.
    Theory {
        #[arg(long)]
        d: usize,
        #[arg(long = "L")]
        l: usize,
        #[arg(long)]
        k: usize,
    },
    /// Two-step fits of series CSVs, either a whole run directory or explicit files.
    Fit {
        #[arg(long, conflicts_with = "series")]
        run: Option<PathBuf>,
        #[arg(long)]
        series: Vec<PathBuf>,
        /// δ label for each `--series` file, in order.
        #[arg(long)]
        delta: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1e-12)]
        noise_floor: f64,
        #[arg(long, default_value_t = 3.0)]
        rms_factor: f64,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample overlap magnitudes, histogram them and fit a generalised gamma law.
    OverlapHist {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate memory and work for a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("KDESIGN_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Config(format!("KDESIGN_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = load(&config)?;
            let dir = run::simulate(&cfg, seed, out.as_deref())?;
            println!("{}", dir.display());
        }
        Command::Spectrum { config, seed, out } => {
            let cfg = load(&config)?;
            if cfg.mode != Mode::Spectrum {
                return Err(CliError::Config("spectrum needs mode = \"spectrum\"".into()));
            }
            let dir = run::spectrum(&cfg, seed, out.as_deref())?;
            println!("{}", dir.display());
        }
        Command::OverlapHist { config, seed, out } => {
            let cfg = load(&config)?;
            let dir = run::overlap_hist(&cfg, seed, out.as_deref())?;
            println!("{}", dir.display());
        }
        Command::Theory { d, l, k } => print_json(&TheoryContext::new(d, l, k)?),
        Command::Fit { run: run_dir, series, delta, k, noise_floor, rms_factor, out } => {
            let (files, deltas) = match &run_dir {
                Some(dir) => run::run_series(dir)?,
                None => {
                    if series.is_empty() {
                        return Err(CliError::Config("fit needs --run DIR or at least one --series FILE".into()));
                    }
                    if !delta.is_empty() && delta.len() != series.len() {
                        return Err(CliError::Config(format!("{} --delta values for {} --series files", delta.len(), series.len())));
                    }
                    let deltas = if delta.is_empty() { vec![None; series.len()] } else { delta.into_iter().map(Some).collect() };
                    (series, deltas)
                }
            };
            let out_dir = out.or(run_dir).unwrap_or_else(|| PathBuf::from("."));
            let opts = TwoStepOptions { noise_floor, rms_factor, ..Default::default() };
            let rows = run::fit(&files, &deltas, k, &opts, &out_dir)?;
            print_json(&rows);
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            cfg.check().map_err(CliError::Config)?;
            print_json(&run::validate(&cfg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
