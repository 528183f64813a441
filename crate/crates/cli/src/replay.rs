//! Integrity check of a finished (or aborted) run directory.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::metrics::{read_records, summarize, CONFIG_FILE, SUMMARY_FILE};
use crate::runner::config_hash;

#[derive(Clone, Debug, Default, Serialize)]
pub struct ReplayReport {
    pub records: usize,
    pub runs: Vec<String>,
    pub config_hash: String,
    pub violations: Vec<String>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Recomputes the config hash and every record digest, checks that steps
/// increase within each run, and re-derives the summary table.
pub fn replay(metrics: &Path) -> CliResult<ReplayReport> {
    let dir = metrics.parent().unwrap_or(Path::new("."));
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| CliError::Data(format!("{}: {e}", cfg_path.display())))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    let hash = config_hash(&cfg);
    let records = read_records(metrics)?;

    let mut report = ReplayReport {
        records: records.len(),
        config_hash: hash.clone(),
        ..Default::default()
    };
    let mut last_step: HashMap<&str, u64> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let line = i + 1;
        if r.config_hash != hash {
            report.violations.push(format!(
                "line {line}: config hash {} does not match {hash}",
                r.config_hash
            ));
        }
        if r.compute_digest() != r.digest {
            report
                .violations
                .push(format!("line {line}: digest mismatch in {}", r.run_id));
        }
        match last_step.get(r.run_id.as_str()) {
            Some(&prev) if r.step <= prev => report
                .violations
                .push(format!("line {line}: step {} after {prev} in {}", r.step, r.run_id)),
            None => report.runs.push(r.run_id.clone()),
            _ => {}
        }
        last_step.insert(&r.run_id, r.step);
    }

    let summary_path = dir.join(SUMMARY_FILE);
    match fs::read_to_string(&summary_path) {
        Ok(on_disk) => {
            if on_disk != summarize(&records) {
                report
                    .violations
                    .push(format!("{SUMMARY_FILE} differs from the metrics"));
            }
        }
        Err(_) => report.violations.push(format!("{SUMMARY_FILE} is missing")),
    }
    Ok(report)
}
