//! End-to-end runs of the `featlab` binary.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use featlab::diagnostics::dump;
use featlab::{Matrix, SplitMix64};
use featlab_cli::config::DatasetSpec;
use featlab_cli::metrics::read_records;
use featlab_cli::{Experiment, ExperimentConfig};
use serde_json::Value;
use tempfile::TempDir;

fn featlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featlab"))
        .args(args)
        .env_remove("DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A swiss-roll config small enough to train in well under a second.
fn small_swiss() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Experiment::SwissrollVirtual);
    cfg.dataset = DatasetSpec::SwissRoll { n: 200, noise: 0.05 };
    cfg.network.hidden = vec![16, 16];
    cfg.epochs = 6;
    cfg.cadence.every_epochs = 2;
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.in.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run_into(dir: &TempDir, cfg: &ExperimentConfig, name: &str) -> (Output, PathBuf) {
    let config = write_config(dir.path(), cfg);
    let out = dir.path().join(name);
    let data = dir.path().join("no-data");
    let res = featlab(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
    ]);
    (res, out)
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"experiment": "swissroll_virtual", "epochs": "many"}"#).unwrap();
    let out = featlab(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let mut cfg = small_swiss();
    cfg.optimizer.lr = -1.0;
    let (out, _) = run_into(&dir, &cfg, "neg");
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_cifar_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = run_into(&dir, &ExperimentConfig::preset(Experiment::TlDynamics), "tl");
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset missing"));
}

#[test]
fn divergence_exits_4_and_keeps_last_good() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_swiss();
    cfg.optimizer.lr = 1e12;
    let (out, run) = run_into(&dir, &cfg, "boom");
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpts: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    let last_good = ckpts[0].as_ref().unwrap().path().join("last_good.grmw");
    assert!(last_good.exists());
    // the epoch-0 record made it to disk and still replays
    let metrics = run.join("metrics.jsonl");
    assert_eq!(code(&featlab(&["replay", "--metrics", metrics.to_str().unwrap()])), 0);
}

#[test]
fn replay_accepts_a_clean_run_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let (out, run) = run_into(&dir, &small_swiss(), "clean");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = run.join("metrics.jsonl");
    let m = metrics.to_str().unwrap();

    let ok = featlab(&["replay", "--metrics", m]);
    assert_eq!(code(&ok), 0);
    let report: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["records"], 4);
    assert!(report["violations"].as_array().unwrap().is_empty());

    let text = fs::read_to_string(&metrics).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.len() - 1;
    let mut rec: Value = serde_json::from_str(&lines[last]).unwrap();
    rec["loss"] = Value::from(rec["loss"].as_f64().unwrap() * 0.5);
    lines[last] = serde_json::to_string(&rec).unwrap();
    fs::write(&metrics, lines.join("\n") + "\n").unwrap();
    let bad = featlab(&["replay", "--metrics", m]);
    assert_eq!(code(&bad), 3);
    let report: Value = serde_json::from_slice(&bad.stdout).unwrap();
    let violations = report["violations"].to_string();
    assert!(violations.contains("digest mismatch"), "{violations}");
    assert!(violations.contains("summary.csv differs"), "{violations}");
}

#[test]
fn seeds_get_distinct_run_ids() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_swiss();
    cfg.seeds = 2;
    let (out, run) = run_into(&dir, &cfg, "seeds");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_records(&run.join("metrics.jsonl")).unwrap();
    let ids: HashSet<&str> = records.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids.len(), 2, "{ids:?}");
    assert!(ids.iter().any(|id| id.contains("-s0-")) && ids.iter().any(|id| id.contains("-s1-")));
    assert!(run.join("trajectory_s0.csv").exists() && run.join("trajectory_s1.csv").exists());
}

#[test]
fn identical_configs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, ra) = run_into(&dir, &small_swiss(), "a");
    let (b, rb) = run_into(&dir, &small_swiss(), "b");
    assert_eq!((code(&a), code(&b)), (0, 0));
    let strip = |p: &Path| -> Vec<Value> {
        fs::read_to_string(p.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                v["wall_time"] = Value::from(0.0);
                v
            })
            .collect()
    };
    assert_eq!(strip(&ra), strip(&rb));
    assert_eq!(
        fs::read(ra.join("trajectory.csv")).unwrap(),
        fs::read(rb.join("trajectory.csv")).unwrap()
    );
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn probe_reports_layerwise_tl() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = SplitMix64::new(11);
    let y = Matrix::from_fn(60, 3, |_, _| rng.normal());
    let mixed = Matrix::from_fn(8, 3, |_, _| rng.normal())
        .matmul(&y.transpose())
        .unwrap();
    let noise = Matrix::from_fn(8, 60, |_, _| rng.normal());
    let acts = dir.path().join("acts.bin");
    let tgts = dir.path().join("y.bin");
    dump::write_activations(&acts, &[noise, mixed]).unwrap();
    dump::write_targets(&tgts, &y).unwrap();

    let out = featlab(&[
        "probe",
        "--activations",
        acts.to_str().unwrap(),
        "--targets",
        tgts.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let tl: Vec<f64> = rows.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(tl.len(), 2);
    assert!(tl[0] < 0.5 && (tl[1] - 1.0).abs() < 1e-8, "{tl:?}");

    let bad = featlab(&[
        "probe",
        "--activations",
        tgts.to_str().unwrap(),
        "--targets",
        tgts.to_str().unwrap(),
    ]);
    assert_eq!(code(&bad), 3);
    let neg = featlab(&[
        "probe",
        "--activations",
        acts.to_str().unwrap(),
        "--targets",
        tgts.to_str().unwrap(),
        "--lambda",
        "-1",
    ]);
    assert_eq!(code(&neg), 2);
}

#[test]
fn check_passes_its_contracts() {
    let out = featlab(&["check", "--scale", "0.2", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text
        .lines()
        .any(|l| l.starts_with("fle_residual") && l.ends_with("pass")));
    assert!(!text.contains("FAIL"));
}

#[test]
fn presets_round_trip_through_the_cli() {
    for e in Experiment::ALL {
        let out = featlab(&["preset", e.name()]);
        assert_eq!(code(&out), 0);
        let cfg = ExperimentConfig::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
        assert_eq!(cfg.experiment, e);
    }
    assert_eq!(code(&featlab(&["preset", "nope"])), 2);
}
