//! Experiment runner behind the `featlab` binary.

pub mod checks;
pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod probe;
pub mod replay;
pub mod runner;
pub mod train;

use std::path::{Path, PathBuf};

use serde_json::Value;

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};

/// Output directory when neither the command line nor the config names one.
pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    let hash = runner::config_hash(cfg);
    PathBuf::from("runs").join(format!("{}-{}", cfg.experiment.name(), &hash[..8]))
}

/// Runs one experiment into `out`. The summary table is written even when the
/// run aborts, so the directory stays replayable.
pub fn run(cfg: ExperimentConfig, out: &Path, data_dir: &Path) -> CliResult<Value> {
    cfg.validate()?;
    let mut ctx = runner::RunContext::create(cfg, out, data_dir)?;
    let result = experiments::run_experiment(&mut ctx);
    ctx.write_summary()?;
    let report = result?;
    ctx.write_report(&report)?;
    Ok(report)
}
