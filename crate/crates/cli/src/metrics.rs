//! JSONL metrics records, their digests and the derived summary table.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use featlab::diagnostics::LayerDiagnostics;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub step: u64,
    pub epoch: usize,
    /// Seconds since the run started; excluded from the digest.
    pub wall_time: f64,
    pub loss: f64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub layers: Vec<LayerDiagnostics>,
    pub optimizer: String,
    pub config_hash: String,
    /// Experiment-specific scalars.
    pub extra: BTreeMap<String, f64>,
    /// SHA-256 of the record with this field empty and `wall_time` zeroed.
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl MetricsRecord {
    pub fn compute_digest(&self) -> String {
        let mut copy = self.clone();
        copy.digest.clear();
        copy.wall_time = 0.0;
        sha256_hex(serde_json::to_string(&copy).expect("record serializes").as_bytes())
    }

    /// All floats must be finite so every row survives a JSON round trip.
    pub fn is_finite(&self) -> bool {
        let layer_ok = self.layers.iter().all(|l| {
            [
                l.tl,
                l.surrogate,
                l.gram_shift_norm,
                l.vcs_norm,
                l.vcs_residual,
                l.fle_residual,
            ]
            .iter()
            .all(|v| v.is_finite())
        });
        self.loss.is_finite()
            && self.train_acc.is_none_or(f64::is_finite)
            && self.test_acc.is_none_or(f64::is_finite)
            && self.extra.values().all(|v| v.is_finite())
            && layer_ok
    }
}

/// Appends records and flushes after every line, so a crash leaves a valid file.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, record: &mut MetricsRecord) -> CliResult<()> {
        if !record.is_finite() {
            return Err(CliError::NumericalFailure(format!(
                "non-finite metrics in {} at epoch {}",
                record.run_id, record.epoch
            )));
        }
        record.digest = record.compute_digest();
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_records(path: &Path) -> CliResult<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|(i, line)| {
            serde_json::from_str(&line?).map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Final-record table, one row per run in order of first appearance.
pub fn summarize(records: &[MetricsRecord]) -> String {
    let mut order: Vec<&str> = Vec::new();
    let mut last: BTreeMap<&str, &MetricsRecord> = BTreeMap::new();
    for r in records {
        if !last.contains_key(r.run_id.as_str()) {
            order.push(&r.run_id);
        }
        last.insert(&r.run_id, r);
    }
    let mut out =
        String::from("run_id,optimizer,epoch,step,loss,train_acc,test_acc,last_layer_tl,last_layer_surrogate\n");
    for id in order {
        let r = last[id];
        let top = r.layers.last();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.run_id,
            r.optimizer,
            r.epoch,
            r.step,
            r.loss,
            opt(r.train_acc),
            opt(r.test_acc),
            opt(top.map(|l| l.tl)),
            opt(top.map(|l| l.surrogate)),
        ));
    }
    out
}

pub fn write_summary(dir: &Path, records: &[MetricsRecord]) -> CliResult<()> {
    fs::write(dir.join(SUMMARY_FILE), summarize(records))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(run: &str, step: u64) -> MetricsRecord {
        MetricsRecord {
            run_id: run.into(),
            step,
            epoch: step as usize,
            wall_time: 1.5,
            loss: 0.25,
            train_acc: Some(0.5),
            test_acc: None,
            layers: Vec::new(),
            optimizer: "sgd".into(),
            config_hash: "abc".into(),
            extra: BTreeMap::new(),
            digest: String::new(),
        }
    }

    #[test]
    fn digest_ignores_wall_time_only() {
        let a = record("r", 1);
        let mut b = a.clone();
        b.wall_time = 99.0;
        assert_eq!(a.compute_digest(), b.compute_digest());
        b.loss = 0.3;
        assert_ne!(a.compute_digest(), b.compute_digest());
    }

    #[test]
    fn summary_keeps_the_last_row_per_run() {
        let rows = vec![record("a", 0), record("b", 0), record("a", 3)];
        let s = summarize(&rows);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("a,sgd,3,3,0.25,0.5,,,"));
        assert!(lines[2].starts_with("b,"));
    }

    #[test]
    fn writer_rejects_non_finite_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_FILE);
        let mut w = MetricsWriter::create(&path).unwrap();
        let mut good = record("a", 0);
        w.write(&mut good).unwrap();
        let mut bad = record("a", 1);
        bad.loss = f64::NAN;
        assert!(matches!(w.write(&mut bad), Err(CliError::NumericalFailure(_))));
        let back = read_records(&path).unwrap();
        assert_eq!(back, vec![good]);
    }
}
