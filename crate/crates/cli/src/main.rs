use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use featlab_cli::checks::{run_all, CheckRow};
use featlab_cli::{default_out_dir, probe, replay, run, CliError, CliResult, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "featlab",
    version,
    about = "Weight-Gram feature-learning experiments and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "DATA_DIR", default_value = "data")]
        data_dir: PathBuf,
    },
    /// Verify digests, step order and the summary of a metrics file.
    Replay {
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Layer-wise TL of dumped activations.
    Probe {
        #[arg(long)]
        activations: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long)]
        pca: Option<usize>,
    },
    /// Run every diagnostics contract sweep; exits 5 if one fails.
    Check {
        /// Multiplies every sweep's trial count.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write a full prop_checks run here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the shipped default config of an experiment.
    Preset { experiment: String },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            data_dir,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| default_out_dir(&cfg));
            let report = run(cfg, &out, &data_dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprintln!("outputs in {}", out.display());
        }
        Command::Replay { metrics } => {
            let report = replay::replay(&metrics)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.is_clean() {
                return Err(CliError::Data(format!("{} violation(s)", report.violations.len())));
            }
        }
        Command::Probe {
            activations,
            targets,
            lambda,
            pca,
        } => {
            let rows = probe::probe_dump(&activations, &targets, lambda, pca)?;
            print!("{}", probe::to_csv(&rows)?);
        }
        Command::Check { scale, seed, out } => {
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(CliError::ConfigInvalid(format!("scale must be positive, got {scale}")));
            }
            let rows = match out {
                Some(dir) => {
                    let mut cfg = ExperimentConfig::preset(Experiment::PropChecks);
                    cfg.seed = seed;
                    cfg.params.trials_scale = scale;
                    run(cfg, &dir, &PathBuf::from("."))?;
                    csv::Reader::from_path(dir.join("checks.csv"))?
                        .into_deserialize::<CheckRow>()
                        .collect::<Result<Vec<_>, _>>()?
                }
                None => run_all(scale, seed)?,
            };
            let mut failed = Vec::new();
            for r in &rows {
                let verdict = if r.passed() {
                    "pass"
                } else if r.gating {
                    failed.push(r.check.clone());
                    "FAIL"
                } else {
                    "miss (reported only)"
                };
                println!(
                    "{:<26} trials={:<4} violations={:<4} statistic={:<12.4e} tol={:<8.1e} {verdict}",
                    r.check, r.trials, r.violations, r.statistic, r.tolerance
                );
            }
            if !failed.is_empty() {
                return Err(CliError::Acceptance(format!("failed: {}", failed.join(", "))));
            }
        }
        Command::Preset { experiment } => {
            let exp = Experiment::ALL
                .into_iter()
                .find(|e| e.name() == experiment)
                .ok_or_else(|| CliError::ConfigInvalid(format!("unknown experiment {experiment}")))?;
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::preset(exp))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
