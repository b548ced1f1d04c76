//! Command-line orchestration of the prototype-domain re-id pipeline.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{ConfigError, PipelineConfig};
use crate::pipeline::Command;

pub const EXIT_PIPELINE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "dldp", version, about = "Prototype-domain person re-identification pipeline")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML config file; omitted means all defaults.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Override a config value, e.g. `discovery.restarts=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; does not affect results.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Resolves the config for `cli`, including `--seed` and `DLDP_OUT`.
pub fn load_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.clone(), source })?,
        None => String::new(),
    };
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = PipelineConfig::resolve(&text, &overrides)?;
    if let Some(out) = std::env::var_os("DLDP_OUT") {
        cfg.paths.out_dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match pipeline::run(cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_PIPELINE)
        }
    }
}
