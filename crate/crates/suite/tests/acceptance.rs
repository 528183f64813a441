//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p featlab-suite --test acceptance` runs everything (about 18
//! minutes on one core). Pass criterion numbers after `--` to run a subset.
//! MNIST and CIFAR are read from `$DATA_DIR`, falling back to `<workspace>/data`.

use std::path::PathBuf;
use std::process::ExitCode;

use featlab::nn::Loss;
use featlab_cli::checks::{
    etf_sweep, fle_sweep, interpolation_sweep, kantorovich_sweep, prop1_sweep, region_sweep, taylor_sweep, thm1_sweep,
    thm2_sweep, thm3_sweep, woodbury_sweep,
};
use featlab_cli::config::{OptimizerConfig, RuleTag};
use featlab_cli::{Experiment, ExperimentConfig};
use serde_json::Value;

const SEED: u64 = 0;
const ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn data_dir() -> PathBuf {
    std::env::var_os("DATA_DIR").map(PathBuf::from).unwrap_or_else(|| {
        let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
        manifest.ancestors().nth(2).unwrap_or(&manifest).join("data")
    })
}

fn run(cfg: ExperimentConfig) -> Result<Value, String> {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    featlab_cli::run(cfg, out.path(), &data_dir()).map_err(|e| e.to_string())
}

fn num(v: &Value, path: &str) -> Result<f64, String> {
    v.pointer(path)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("report has no number at {path}"))
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn count_false(v: impl IntoIterator<Item = bool>) -> usize {
    v.into_iter().filter(|b| !b).count()
}

fn fle() -> Outcome {
    let r = fle_sweep(100, SEED).map_err(|e| e.to_string())?;
    let worst = max(&r);
    Ok((
        worst <= 1e-10,
        format!("max residual {worst:.3e} over {} triples (tol 1e-10)", r.len()),
    ))
}

fn thm1() -> Outcome {
    let r = thm1_sweep(20, &[1e-2, 1e-3], SEED).map_err(|e| e.to_string())?;
    let lo = r.iter().map(|x| x.ratio).fold(f64::INFINITY, f64::min);
    let hi = r.iter().map(|x| x.ratio).fold(f64::NEG_INFINITY, f64::max);
    let ok = r.iter().all(|x| (3.5..=4.5).contains(&x.ratio));
    Ok((
        ok,
        format!(
            "ratio range [{lo:.6}, {hi:.6}] over {} cases (want [3.5, 4.5])",
            r.len()
        ),
    ))
}

fn gram_preservation() -> Outcome {
    let mut cfg = ExperimentConfig::preset(Experiment::WhiteningCompare);
    cfg.epochs = 5;
    cfg.seeds = 1;
    cfg.compare = vec![OptimizerConfig::sgd(0.05).with_rule(RuleTag::WhitenedSgd)];
    cfg.cadence.gram_steps_per_epoch = 0;
    let report = run(cfg)?;
    let dev = num(&report, "/optimizers/0/max_gram_deviation")?;
    Ok((
        dev <= 1e-6,
        format!("max Gram deviation {dev:.3e} over every step of 5 epochs (tol 1e-6)"),
    ))
}

fn whitening_parity() -> Outcome {
    let report = run(ExperimentConfig::preset(Experiment::WhiteningCompare))?;
    let sgd = num(&report, "/optimizers/0/mean_test_acc")?;
    let white = num(&report, "/optimizers/1/mean_test_acc")?;
    let gap = (white - sgd).abs();
    Ok((
        gap <= 0.03,
        format!("mean test acc sgd {sgd:.4}, whitened {white:.4}, gap {gap:.4} (tol 0.03)"),
    ))
}

fn vcs_vs_agop() -> Outcome {
    let report = run(ExperimentConfig::preset(Experiment::VcsVsAgop))?;
    let vcs = num(&report, "/pearson_gram_vcs")?;
    let agop = num(&report, "/pearson_gram_agop")?;
    Ok((
        vcs >= 0.9 && vcs > agop,
        format!("pearson vcs {vcs:.4}, agop {agop:.4} (want vcs >= 0.9 and vcs > agop)"),
    ))
}

fn woodbury() -> Outcome {
    let r = woodbury_sweep(50, SEED).map_err(|e| e.to_string())?;
    let worst = max(&r);
    Ok((
        worst <= 1e-8,
        format!("max relative gap {worst:.3e} over {} instances (tol 1e-8)", r.len()),
    ))
}

fn thm2() -> Outcome {
    let r = thm2_sweep(100, SEED).map_err(|e| e.to_string())?;
    let bad = count_false(r.iter().map(|b| b.holds()));
    Ok((bad == 0, format!("{bad} violations over {} instances", r.len())))
}

fn thm3() -> Outcome {
    let mse = median(&thm3_sweep(50, Loss::Mse, 1e-4, SEED).map_err(|e| e.to_string())?);
    let bce = median(&thm3_sweep(50, Loss::Bce, 1e-4, SEED).map_err(|e| e.to_string())?);
    Ok((
        mse <= 0.1 && bce <= 0.1,
        format!("median relative gap mse {mse:.4}, bce {bce:.4} over 50 seeds (tol 0.1)"),
    ))
}

fn layer_monotone() -> Outcome {
    let report = run(ExperimentConfig::preset(Experiment::TlDynamics))?;
    let tl = report["tl_strictly_increasing"].as_bool() == Some(true);
    let sur = report["surrogate_strictly_increasing"].as_bool() == Some(true);
    let first = num(&report, "/last_layer_tl_initial")?;
    let last = num(&report, "/last_layer_tl_final")?;
    Ok((
        tl && sur && last > first,
        format!("tl increasing {tl}, surrogate increasing {sur}, last-layer TL {first:.4} -> {last:.4}"),
    ))
}

fn lazy_vs_rich() -> Outcome {
    let report = run(ExperimentConfig::preset(Experiment::LazyVsRich))?;
    let widths = report["widths"].as_array().ok_or("report has no widths")?;
    let gaps = |w: u64| -> Result<(f64, f64), String> {
        let r = widths
            .iter()
            .find(|r| r["width"].as_u64() == Some(w))
            .ok_or_else(|| format!("no row for width {w}"))?;
        Ok((num(r, "/initial_target_gap")?, num(r, "/final_target_gap")?))
    };
    let (n0, n1) = gaps(32)?;
    let (w0, w1) = gaps(1024)?;
    let (narrow, wide) = (n1 / n0, w1 / w0);
    Ok((
        narrow <= 0.5 && (0.9..=1.1).contains(&wide),
        format!(
            "|y - y_OLS| width 32 {n0:.4} -> {n1:.4} (ratio {narrow:.4}, want <= 0.5), \
             width 1024 {w0:.4} -> {w1:.4} (ratio {wide:.4}, want 0.9..1.1)"
        ),
    ))
}

fn nc_extremality() -> Outcome {
    let rows = etf_sweep(&[2, 3, 5, 10], 10, SEED).map_err(|e| e.to_string())?;
    let dist = rows.iter().map(|r| r.relative_distance).fold(0.0, f64::max);
    let gap = rows.iter().map(|r| r.maximality_gap.abs()).fold(0.0, f64::max);
    let dims_ok = rows.iter().all(|r| r.dim == r.classes + 3);
    Ok((
        dims_ok && dist <= 1e-8 && gap <= 1e-8,
        format!("max relative distance {dist:.3e}, max maximality gap {gap:.3e} (tol 1e-8)"),
    ))
}

fn vae_interpolation() -> Outcome {
    let report = run(ExperimentConfig::preset(Experiment::VaeBeta))?;
    let trained = report
        .pointer("/runs/0/bound_holds")
        .and_then(Value::as_bool)
        .ok_or("report has no bound_holds")?;
    let random = interpolation_sweep(20, &ALPHAS, SEED).map_err(|e| e.to_string())?;
    let bad = count_false(random.iter().map(|g| g.holds()));
    Ok((
        trained && bad == 0,
        format!(
            "trained-VAE bound holds {trained}; random instances {bad} violations of {}",
            random.len()
        ),
    ))
}

fn prop1() -> Outcome {
    let r = prop1_sweep(100, SEED).map_err(|e| e.to_string())?;
    let bad = count_false(r.iter().copied());
    Ok((bad == 0, format!("{bad} failing trials of {}", r.len())))
}

fn taylor() -> Outcome {
    let r = taylor_sweep(50, SEED).map_err(|e| e.to_string())?;
    let worst = max(&r);
    Ok((
        worst <= 1e-8,
        format!("max relative gap {worst:.3e} over {} batches (tol 1e-8)", r.len()),
    ))
}

fn lemmas() -> Outcome {
    let k = kantorovich_sweep(200, SEED).map_err(|e| e.to_string())?;
    let r = region_sweep(500, SEED).map_err(|e| e.to_string())?;
    let kb = count_false(k.iter().map(|c| c.holds()));
    let rb = count_false(r.iter().map(|c| c.holds()));
    Ok((
        kb == 0 && rb == 0,
        format!(
            "kantorovich {kb}/{} violations, segment pairs {rb}/{} violations",
            k.len(),
            r.len()
        ),
    ))
}

fn random_labels() -> Outcome {
    let report = run(ExperimentConfig::preset(Experiment::RandomLabel))?;
    let clean = num(&report, "/runs/0/last_layer_tl_final")?;
    let shuffled = num(&report, "/runs/1/last_layer_tl_final")?;
    Ok((
        shuffled < clean,
        format!("final last-layer TL p=0 {clean:.4}, p=1 {shuffled:.4} (want p=1 below p=0)"),
    ))
}

fn grokking() -> Outcome {
    let report = run(ExperimentConfig::preset(Experiment::Grokking))?;
    let Some(epoch) = report["memorized_epoch"].as_u64() else {
        return Ok((false, "train accuracy never reached 0.99".into()));
    };
    let at = num(&report, "/last_layer_tl_at_memorization")?;
    let fin = num(&report, "/last_layer_tl_final")?;
    Ok((
        fin >= at,
        format!("last-layer TL {at:.4} at memorization (epoch {epoch}), {fin:.4} at the end"),
    ))
}

fn swiss_roll() -> Outcome {
    let report = run(ExperimentConfig::preset(Experiment::SwissrollVirtual))?;
    let raw = num(&report, "/tl_raw")?;
    let fin = num(&report, "/tl_final")?;
    Ok((
        fin - raw >= 0.2,
        format!(
            "TL raw {raw:.4}, virtually updated {fin:.4}, gain {:.4} (want >= 0.2)",
            fin - raw
        ),
    ))
}

const CRITERIA: [Criterion; 18] = [
    ("FLE exactness", fle),
    ("second-order Gram residual", thm1),
    ("whitened-step Gram preservation", gram_preservation),
    ("whitening training parity", whitening_parity),
    ("VCS vs AGOP", vcs_vs_agop),
    ("Woodbury identity", woodbury),
    ("TL surrogate lower bound", thm2),
    ("surrogate-change prediction", thm3),
    ("layer-wise monotonicity", layer_monotone),
    ("lazy vs rich", lazy_vs_rich),
    ("NC extremality", nc_extremality),
    ("interpolation bound", vae_interpolation),
    ("virtual vs actual update alignment", prop1),
    ("pairwise Taylor sum", taylor),
    ("Kantorovich and PWL lemmas", lemmas),
    ("random labels", random_labels),
    ("grokking", grokking),
    ("swiss-roll virtual unrolling", swiss_roll),
];

fn main() -> ExitCode {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let id = i + 1;
        if !picked.is_empty() && !picked.contains(&id) {
            continue;
        }
        let start = std::time::Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
