//! Command-line front end: `raven <command> --config run.toml --out dir`.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{regenerate_report, Outcome, Run};
pub use config::RunConfig;
pub use manifest::RunManifest;

use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "raven", version, about = "Watermark-removal attack workbench")]
pub struct Cli {
    /// Run configuration (TOML), or a stage manifest.json to replay.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Run root; each stage writes a subdirectory here.
    #[arg(long, short, global = true, default_value = "run")]
    pub out: PathBuf,

    /// Override a scalar config field, e.g. `--set raven.strength=0.25`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Watermark the input images and write keys.
    Embed,
    /// Apply every configured attack to the marked images.
    Attack,
    /// Score null images and fix per-scheme thresholds.
    Calibrate {
        /// Replace cached thresholds even if their null set changed.
        #[arg(long)]
        recalibrate: bool,
    },
    /// Score marked and attacked images against the thresholds.
    Detect,
    /// Aggregate everything into JSON, CSV, a table and plots.
    Report {
        /// Only rebuild CSV and table from this persisted report.json.
        #[arg(long, value_name = "REPORT_JSON")]
        from_json: Option<PathBuf>,
    },
    /// Write a default config (unless --config is given) and run all stages.
    Demo,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::StaleCache(_) | Error::TooFewSamples { .. } => EXIT_CONFIG,
        Error::Backend(_) | Error::MissingWeights { .. } => EXIT_BACKEND,
        _ => EXIT_FAILURE,
    }
}

/// Loads a TOML config, or the config embedded in a manifest.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        let m = RunManifest::read(path)?;
        let text = toml::to_string(&m.config).map_err(|e| Error::Serde(e.to_string()))?;
        return RunConfig::parse(&text, overrides);
    }
    RunConfig::load(path, overrides)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    if let Command::Report { from_json: Some(p) } = &cli.command {
        return regenerate_report(p);
    }
    let config_path = match (&cli.command, &cli.config) {
        (_, Some(p)) => p.clone(),
        (Command::Demo, None) => commands::write_demo_config(&cli.out)?,
        _ => return Err(Error::Config(vec!["--config is required".into()])),
    };
    let run = Run::new(load_config(&config_path, &cli.overrides)?, &cli.out)?;
    match &cli.command {
        Command::Embed => run.embed(),
        Command::Attack => run.attack(),
        Command::Calibrate { recalibrate } => run.calibrate(*recalibrate),
        Command::Detect => run.detect(),
        Command::Report { .. } => run.report(),
        Command::Demo => run.all(),
    }
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(Outcome::Complete) => EXIT_OK,
        Ok(Outcome::Partial(n)) => {
            eprintln!("completed with {n} per-image failures");
            EXIT_PARTIAL
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
