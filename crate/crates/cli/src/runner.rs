//! Output directory handling and the logged training loop shared by experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use featlab::data::Dataset;
use featlab::nn::{checkpoint, Loss, Network};
use serde::Serialize;

use crate::config::{ExperimentConfig, OptimizerConfig};
use crate::error::{CliError, CliResult};
use crate::metrics::{sha256_hex, write_summary, MetricsRecord, MetricsWriter, CONFIG_FILE, METRICS_FILE};
use crate::train::{evaluate, hidden_layer_diagnostics, EpochStats, StepView, Trainer};

pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.canonical_json().as_bytes())
}

/// One output directory: archived config, metrics stream, CSVs and checkpoints.
pub struct RunContext {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub data_dir: PathBuf,
    pub config_hash: String,
    writer: MetricsWriter,
    records: Vec<MetricsRecord>,
    start: Instant,
}

impl RunContext {
    pub fn create(cfg: ExperimentConfig, out: &Path, data_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        let hash = config_hash(&cfg);
        let pretty = serde_json::to_string_pretty(&cfg)?;
        fs::write(out.join(CONFIG_FILE), pretty + "\n")?;
        Ok(Self {
            writer: MetricsWriter::create(&out.join(METRICS_FILE))?,
            cfg,
            out: out.to_path_buf(),
            data_dir: data_dir.to_path_buf(),
            config_hash: hash,
            records: Vec::new(),
            start: Instant::now(),
        })
    }

    pub fn run_id(&self, seed: u64, tag: &str) -> String {
        format!(
            "{}-s{seed}-{tag}-{}",
            self.cfg.experiment.name(),
            &self.config_hash[..8]
        )
    }

    pub fn record(&self, run_id: &str, optimizer: &str, step: u64, epoch: usize, loss: f64) -> MetricsRecord {
        MetricsRecord {
            run_id: run_id.into(),
            step,
            epoch,
            wall_time: 0.0,
            loss,
            train_acc: None,
            test_acc: None,
            layers: Vec::new(),
            optimizer: optimizer.into(),
            config_hash: self.config_hash.clone(),
            extra: BTreeMap::new(),
            digest: String::new(),
        }
    }

    pub fn write(&mut self, mut record: MetricsRecord) -> CliResult<MetricsRecord> {
        record.wall_time = self.start.elapsed().as_secs_f64();
        self.writer.write(&mut record)?;
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// CSV file name, suffixed by seed when the config runs several seeds.
    pub fn csv_name(&self, stem: &str, seed: u64) -> String {
        if self.cfg.seeds > 1 {
            format!("{stem}_s{seed}.csv")
        } else {
            format!("{stem}.csv")
        }
    }

    pub fn write_csv<S: Serialize>(&self, name: &str, rows: &[S]) -> CliResult<()> {
        let mut w = csv::Writer::from_path(self.out.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn checkpoint_dir(&self, run_id: &str) -> CliResult<PathBuf> {
        let dir = self.out.join(CHECKPOINT_DIR).join(run_id);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn save_network(&self, run_id: &str, name: &str, net: &Network) -> CliResult<()> {
        let path = self.checkpoint_dir(run_id)?.join(format!("{name}.grmw"));
        checkpoint::save(net, &path)?;
        Ok(())
    }

    pub fn write_summary(&self) -> CliResult<()> {
        write_summary(&self.out, &self.records)
    }

    pub fn write_report(&self, report: &serde_json::Value) -> CliResult<()> {
        fs::write(self.out.join(REPORT_FILE), serde_json::to_string_pretty(report)? + "\n")?;
        Ok(())
    }
}

/// Experiment-specific callbacks around [`train_logged`].
pub trait Observer {
    fn step(&mut self, _view: &StepView) -> CliResult<()> {
        Ok(())
    }

    /// After every epoch (`epoch ≥ 1`).
    fn epoch(&mut self, _epoch: usize, _trainer: &Trainer, _stats: &EpochStats) -> CliResult<()> {
        Ok(())
    }

    /// Before a cadence record is written; may add extras.
    fn tick(&mut self, _record: &mut MetricsRecord, _trainer: &Trainer) -> CliResult<()> {
        Ok(())
    }
}

impl Observer for () {}

pub struct RunSpec<'a> {
    pub run_id: String,
    pub seed: u64,
    pub optimizer: &'a OptimizerConfig,
    pub net: Network,
    pub loss: Loss,
    pub train: &'a Dataset,
    pub test: Option<&'a Dataset>,
    /// Diagnostics subset; `None` skips the per-layer diagnostics.
    pub probe: Option<&'a Dataset>,
    pub classify: bool,
}

/// Trains for `cfg.epochs`, writing a record at epoch 0, every cadence tick and
/// the final epoch. On a numerical failure, in a step or in the diagnostics of
/// a record, the network from before that epoch is saved as `last_good`
/// before the error propagates.
pub fn train_logged(ctx: &mut RunContext, spec: RunSpec, obs: &mut dyn Observer) -> CliResult<Trainer> {
    let mut trainer = Trainer::new(
        spec.net.clone(),
        spec.optimizer,
        spec.loss,
        ctx.cfg.batch_size,
        spec.seed,
    )?;
    trainer.gram_steps = ctx.cfg.cadence.gram_steps_per_epoch;
    let mut progress = Progress {
        gram_since_tick: 0.0,
        last_mean: f64::NAN,
    };
    for epoch in 0..=ctx.cfg.epochs {
        let last_good = trainer.net.clone();
        if let Err(e) = logged_epoch(ctx, &spec, obs, &mut trainer, &mut progress, epoch) {
            if matches!(e, CliError::NumericalFailure(_)) {
                ctx.save_network(&spec.run_id, "last_good", &last_good)?;
            }
            return Err(e);
        }
    }
    ctx.save_network(&spec.run_id, "final", &trainer.net)?;
    Ok(trainer)
}

struct Progress {
    gram_since_tick: f64,
    last_mean: f64,
}

fn logged_epoch(
    ctx: &mut RunContext,
    spec: &RunSpec,
    obs: &mut dyn Observer,
    trainer: &mut Trainer,
    progress: &mut Progress,
    epoch: usize,
) -> CliResult<()> {
    let cfg = ctx.cfg.clone();
    if epoch > 0 {
        let stats = trainer.epoch(spec.train, |v| obs.step(v))?;
        progress.gram_since_tick = progress.gram_since_tick.max(stats.gram_deviation);
        progress.last_mean = stats.mean_loss;
        obs.epoch(epoch, trainer, &stats)?;
        if cfg.cadence.checkpoint_every > 0 && epoch.is_multiple_of(cfg.cadence.checkpoint_every) {
            ctx.save_network(&spec.run_id, &format!("epoch{epoch:04}"), &trainer.net)?;
        }
    }
    if !epoch.is_multiple_of(cfg.cadence.every_epochs) && epoch != cfg.epochs {
        return Ok(());
    }
    let (loss, train_acc) = evaluate(&trainer.net, spec.loss, spec.train, spec.classify)?;
    let mut rec = ctx.record(&spec.run_id, spec.optimizer.rule().tag(), trainer.step, epoch, loss);
    rec.train_acc = train_acc;
    if let Some(test) = spec.test {
        rec.test_acc = evaluate(&trainer.net, spec.loss, test, spec.classify)?.1;
    }
    if let Some(probe) = spec.probe {
        rec.layers = hidden_layer_diagnostics(&trainer.net, spec.loss, probe, cfg.cadence.lambda, spec.optimizer.lr)?;
    }
    if epoch > 0 {
        rec.extra.insert("epoch_mean_loss".into(), progress.last_mean);
    }
    rec.extra.insert("gram_deviation".into(), progress.gram_since_tick);
    rec.extra.insert(
        "standardized".into(),
        f64::from(u8::from(cfg.standardize && cfg.dataset.is_image())),
    );
    progress.gram_since_tick = 0.0;
    obs.tick(&mut rec, trainer)?;
    ctx.write(rec)?;
    Ok(())
}
