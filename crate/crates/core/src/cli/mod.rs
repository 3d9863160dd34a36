//! The `emsdeploy` command line: one subcommand per pipeline stage, all
//! reading and writing under a single output directory.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_overrides, resolve, RunConfig};
pub use output::{Manifest, ManifestEntry};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("missing {file}; run `emsdeploy {subcommand}` first")]
    Dependency { file: String, subcommand: &'static str },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Dependency { .. } => 3,
            CliError::Solver(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    crate::geogrid::GridError,
    crate::ingest::IngestError,
    crate::demand::DemandError,
    crate::calibrate::CalibrationError,
    crate::analysis::AnalysisError,
    std::io::Error,
    serde_json::Error,
    csv::Error
);

macro_rules! solver_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Solver(e.to_string())
            }
        }
    )*};
}

solver_errors!(crate::dispatchflow::FlowError, crate::stochastic::StochasticError, crate::robust::RobustError);

impl From<crate::simcore::SimError> for CliError {
    fn from(e: crate::simcore::SimError) -> Self {
        match e {
            crate::simcore::SimError::BadParams(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::synth::SynthError> for CliError {
    fn from(e: crate::synth::SynthError) -> Self {
        match e {
            crate::synth::SynthError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "emsdeploy", version, about = "Ambulance stationing under uncertain demand")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config value.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Any config field as `--key value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic city: calls, tract map and covariates.
    Synth(Common),
    /// Build the grid, travel matrix and coverage edges.
    Grid(Common),
    /// Parse calls, split train/test and count period demand.
    Preprocess(Common),
    /// Fit Poisson rates, the uncertainty set, scenarios and travel calibration.
    Fit(Common),
    /// Solve the stochastic and robust stationing problems.
    Optimize(Common),
    /// Simulate the optimized stationings on the test calls.
    Simulate(Common),
    /// Compare calibrated and reported travel times in batches.
    Verify(Common),
    /// Cross-validate the robust model over several alphas.
    AlphaCv(Common),
    /// Solve and simulate over a range of fleet sizes.
    FleetSweep(Common),
    /// Tract-level regression comparison.
    Analyze(Common),
    /// Emit plot-ready tables from earlier outputs.
    Plotdata(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Grid(_) => "grid",
            Command::Preprocess(_) => "preprocess",
            Command::Fit(_) => "fit",
            Command::Optimize(_) => "optimize",
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
            Command::AlphaCv(_) => "alpha-cv",
            Command::FleetSweep(_) => "fleet-sweep",
            Command::Analyze(_) => "analyze",
            Command::Plotdata(_) => "plotdata",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth(c)
            | Command::Grid(c)
            | Command::Preprocess(c)
            | Command::Fit(c)
            | Command::Optimize(c)
            | Command::Simulate(c)
            | Command::Verify(c)
            | Command::AlphaCv(c)
            | Command::FleetSweep(c)
            | Command::Analyze(c)
            | Command::Plotdata(c) => c,
        }
    }
}

/// Resolves the configuration and runs one subcommand.
pub fn run(cli: Cli) -> Result<Manifest, CliError> {
    let common = cli.command.common().clone();
    let mut out = common.out.clone();
    let mut config_path = common.config.clone();
    let mut overrides = Vec::new();
    for (k, v) in parse_overrides(&common.overrides)? {
        match k.as_str() {
            "out" => out = PathBuf::from(v),
            "config" => config_path = Some(PathBuf::from(v)),
            _ => overrides.push((k, v)),
        }
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let cfg = resolve(config_path.as_deref(), &overrides)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    let name = cli.command.name();
    log::info!("running {name} into {}", out.display());
    let mut w = output::OutputDir::new(out, name, &cfg)?;
    let ctx = commands::Ctx { cfg: &cfg };
    match cli.command {
        Command::Synth(_) => commands::synth(&ctx, &mut w)?,
        Command::Grid(_) => commands::grid(&ctx, &mut w)?,
        Command::Preprocess(_) => commands::preprocess(&ctx, &mut w)?,
        Command::Fit(_) => commands::fit(&ctx, &mut w)?,
        Command::Optimize(_) => commands::optimize(&ctx, &mut w)?,
        Command::Simulate(_) => commands::simulate(&ctx, &mut w)?,
        Command::Verify(_) => commands::verify(&ctx, &mut w)?,
        Command::AlphaCv(_) => commands::alpha_cv(&ctx, &mut w)?,
        Command::FleetSweep(_) => commands::fleet_sweep(&ctx, &mut w)?,
        Command::Analyze(_) => commands::analyze(&ctx, &mut w)?,
        Command::Plotdata(_) => commands::plotdata(&ctx, &mut w)?,
    }
    w.finish()
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(m) => {
            println!("{}: wrote {} files", m.subcommand, m.files.len());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
