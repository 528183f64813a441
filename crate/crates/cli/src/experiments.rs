//! One function per experiment. Each writes its CSVs and returns a JSON report.

use featlab::data::{corrupt_labels, Dataset};
use featlab::diagnostics::{
    moving_target_decomp, nc_probe, ols_interpolation_gap, target_linearity, virtual_trajectory, NcReport,
};
use featlab::linalg::{pearson, spearman};
use featlab::nn::{Activation, Loss, Network, NetworkSpec, OutputTarget, VaeModel};
use featlab::optim::OptimizerState;
use featlab::{Matrix, SplitMix64};
use serde::Serialize;
use serde_json::{json, Value};

use crate::checks::{self, gaussian};
use crate::config::Experiment;
use crate::error::{CliError, CliResult};
use crate::metrics::MetricsRecord;
use crate::runner::{train_logged, Observer, RunContext, RunSpec};
use crate::train::{
    build_network, evaluate, informative_targets, network_spec, prepare_dataset, probe_subset, EpochStats, StepView,
    Trainer,
};

/// Memorization threshold for the grokking report.
pub const MEMORIZED_ACC: f64 = 0.99;

pub fn run_experiment(ctx: &mut RunContext) -> CliResult<Value> {
    use Experiment as E;
    let exp = ctx.cfg.experiment;
    match exp {
        E::WhiteningCompare => return whitening_compare(ctx),
        E::PropChecks => return prop_checks(ctx),
        _ => {}
    }
    let mut reports = Vec::new();
    for s in 0..ctx.cfg.seeds {
        let seed = ctx.cfg.seed + s as u64;
        reports.push(match exp {
            E::TlDynamics => tl_dynamics(ctx, seed)?,
            E::RandomLabel => random_label(ctx, seed)?,
            E::VcsVsAgop => vcs_vs_agop(ctx, seed)?,
            E::LazyVsRich => lazy_vs_rich(ctx, seed)?,
            E::SwissrollVirtual => swissroll_virtual(ctx, seed)?,
            E::Grokking => grokking(ctx, seed)?,
            E::VaeBeta => vae_beta(ctx, seed)?,
            E::NcProbe => nc_probe_experiment(ctx, seed)?,
            E::WhiteningCompare | E::PropChecks => unreachable!(),
        });
    }
    Ok(if reports.len() == 1 {
        reports.pop().expect("one report")
    } else {
        json!({ "experiment": exp.name(), "runs": reports })
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

// ---------------------------------------------------------------- whitening

#[derive(Serialize)]
struct AccuracyRow {
    run_id: String,
    optimizer: String,
    seed: u64,
    epoch: usize,
    train_loss: f64,
    test_acc: f64,
    gram_deviation: f64,
}

struct AccuracyLog<'a> {
    run_id: String,
    optimizer: String,
    seed: u64,
    test: &'a Dataset,
    loss: Loss,
    rows: Vec<AccuracyRow>,
}

impl Observer for AccuracyLog<'_> {
    fn epoch(&mut self, epoch: usize, trainer: &Trainer, stats: &EpochStats) -> CliResult<()> {
        let (_, acc) = evaluate(&trainer.net, self.loss, self.test, true)?;
        self.rows.push(AccuracyRow {
            run_id: self.run_id.clone(),
            optimizer: self.optimizer.clone(),
            seed: self.seed,
            epoch,
            train_loss: stats.mean_loss,
            test_acc: acc.unwrap_or(f64::NAN),
            gram_deviation: stats.gram_deviation,
        });
        Ok(())
    }
}

fn whitening_compare(ctx: &mut RunContext) -> CliResult<Value> {
    let cfg = ctx.cfg.clone();
    let split = prepare_dataset(&cfg, &ctx.data_dir)?;
    let test = split
        .test
        .as_ref()
        .ok_or_else(|| CliError::ConfigInvalid("whitening_compare needs a test split".into()))?;
    let probe = probe_subset(&split.train, cfg.cadence.tl_subset, cfg.seed);
    let loss = cfg.loss();
    let mut rows = Vec::new();
    let mut finals: Vec<Vec<f64>> = vec![Vec::new(); cfg.compare.len()];
    let mut gram_max: Vec<f64> = vec![0.0; cfg.compare.len()];
    for s in 0..cfg.seeds {
        let seed = cfg.seed + s as u64;
        for (i, opt) in cfg.compare.iter().enumerate() {
            let tag = opt.rule().tag();
            let run_id = ctx.run_id(seed, &format!("{i}{tag}"));
            let mut log = AccuracyLog {
                run_id: run_id.clone(),
                optimizer: tag.into(),
                seed,
                test,
                loss,
                rows: Vec::new(),
            };
            let spec = RunSpec {
                run_id,
                seed,
                optimizer: opt,
                net: build_network(&cfg, &split.train, seed)?,
                loss,
                train: &split.train,
                test: Some(test),
                probe: Some(&probe),
                classify: true,
            };
            train_logged(ctx, spec, &mut log)?;
            if let Some(last) = log.rows.last() {
                finals[i].push(last.test_acc);
            }
            gram_max[i] = log.rows.iter().fold(gram_max[i], |a, r| a.max(r.gram_deviation));
            rows.extend(log.rows);
        }
    }
    ctx.write_csv("accuracy_by_epoch.csv", &rows)?;
    let optimizers: Vec<Value> = cfg
        .compare
        .iter()
        .enumerate()
        .map(|(i, o)| {
            json!({
                "rule": o.rule().tag(),
                "lr": o.lr,
                "final_test_acc": finals[i],
                "mean_test_acc": mean(&finals[i]),
                "max_gram_deviation": gram_max[i],
            })
        })
        .collect();
    let gap = if finals.len() >= 2 {
        (mean(&finals[1]) - mean(&finals[0])).abs()
    } else {
        0.0
    };
    Ok(json!({
        "experiment": "whitening_compare",
        "epochs": cfg.epochs,
        "seeds": cfg.seeds,
        "optimizers": optimizers,
        "mean_test_acc_gap": gap,
    }))
}

// ------------------------------------------------------- layer-wise dynamics

#[derive(Serialize)]
struct LayerRow {
    run_id: String,
    corruption: f64,
    epoch: usize,
    layer: usize,
    tl: f64,
    surrogate: f64,
    gram_shift_norm: f64,
    vcs_residual: f64,
    fle_residual: f64,
}

struct LayerLog {
    corruption: f64,
    rows: Vec<LayerRow>,
    history: Vec<MetricsRecord>,
}

impl Observer for LayerLog {
    fn tick(&mut self, rec: &mut MetricsRecord, _trainer: &Trainer) -> CliResult<()> {
        for l in &rec.layers {
            self.rows.push(LayerRow {
                run_id: rec.run_id.clone(),
                corruption: self.corruption,
                epoch: rec.epoch,
                layer: l.layer,
                tl: l.tl,
                surrogate: l.surrogate,
                gram_shift_norm: l.gram_shift_norm,
                vcs_residual: l.vcs_residual,
                fle_residual: l.fle_residual,
            });
        }
        self.history.push(rec.clone());
        Ok(())
    }
}

fn layer_summary(history: &[MetricsRecord]) -> CliResult<Value> {
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(CliError::NumericalFailure("no diagnostics recorded".into())),
    };
    let idx: Vec<f64> = last.layers.iter().map(|l| l.layer as f64).collect();
    let tl: Vec<f64> = last.layers.iter().map(|l| l.tl).collect();
    let sur: Vec<f64> = last.layers.iter().map(|l| l.surrogate).collect();
    let rank = |v: &[f64]| if v.len() >= 2 { spearman(&idx, v).ok() } else { None };
    Ok(json!({
        "run_id": last.run_id,
        "layers": idx,
        "initial_tl": first.layers.iter().map(|l| l.tl).collect::<Vec<_>>(),
        "final_tl": tl,
        "final_surrogate": sur,
        "spearman_tl": rank(&tl),
        "spearman_surrogate": rank(&sur),
        "tl_strictly_increasing": strictly_increasing(&tl),
        "surrogate_strictly_increasing": strictly_increasing(&sur),
        "last_layer_tl_initial": first.layers.last().map(|l| l.tl),
        "last_layer_tl_final": last.layers.last().map(|l| l.tl),
        "final_train_acc": last.train_acc,
        "final_test_acc": last.test_acc,
    }))
}

fn layerwise_run(
    ctx: &mut RunContext,
    seed: u64,
    train: &Dataset,
    test: Option<&Dataset>,
    corruption: f64,
) -> CliResult<LayerLog> {
    let cfg = ctx.cfg.clone();
    let probe = probe_subset(train, cfg.cadence.tl_subset, cfg.seed);
    let tag = if cfg.experiment == Experiment::RandomLabel {
        format!("p{corruption}")
    } else {
        cfg.optimizer.rule().tag().to_string()
    };
    let mut log = LayerLog {
        corruption,
        rows: Vec::new(),
        history: Vec::new(),
    };
    let spec = RunSpec {
        run_id: ctx.run_id(seed, &tag),
        seed,
        optimizer: &cfg.optimizer,
        net: build_network(&cfg, train, seed)?,
        loss: cfg.loss(),
        train,
        test,
        probe: Some(&probe),
        classify: true,
    };
    train_logged(ctx, spec, &mut log)?;
    Ok(log)
}

fn tl_dynamics(ctx: &mut RunContext, seed: u64) -> CliResult<Value> {
    let split = prepare_dataset(&ctx.cfg, &ctx.data_dir)?;
    let log = layerwise_run(ctx, seed, &split.train, split.test.as_ref(), 0.0)?;
    ctx.write_csv(&ctx.csv_name("tl_by_layer", seed), &log.rows)?;
    let mut report = layer_summary(&log.history)?;
    report["experiment"] = json!("tl_dynamics");
    Ok(report)
}

fn random_label(ctx: &mut RunContext, seed: u64) -> CliResult<Value> {
    let split = prepare_dataset(&ctx.cfg, &ctx.data_dir)?;
    let mut rows = Vec::new();
    let mut per_p = Vec::new();
    for &p in &ctx.cfg.params.corruption.clone() {
        let train = corrupt_labels(&split.train, p, seed ^ 0xC0)?;
        let log = layerwise_run(ctx, seed, &train, split.test.as_ref(), p)?;
        let mut summary = layer_summary(&log.history)?;
        summary["corruption"] = json!(p);
        per_p.push(summary);
        rows.extend(log.rows);
    }
    ctx.write_csv(&ctx.csv_name("tl_by_layer", seed), &rows)?;
    Ok(json!({ "experiment": "random_label", "runs": per_p }))
}

// ----------------------------------------------------------------- grokking

#[derive(Serialize)]
struct GrokRow {
    epoch: usize,
    train_acc: f64,
    test_acc: f64,
    layer: usize,
    tl: f64,
    surrogate: f64,
}

#[derive(Default)]
struct GrokLog {
    rows: Vec<GrokRow>,
    /// (epoch, train acc, last-layer TL, TL gap)
    ticks: Vec<(usize, f64, f64, f64)>,
}

impl Observer for GrokLog {
    fn tick(&mut self, rec: &mut MetricsRecord, _trainer: &Trainer) -> CliResult<()> {
        let train_acc = rec.train_acc.unwrap_or(f64::NAN);
        for l in &rec.layers {
            self.rows.push(GrokRow {
                epoch: rec.epoch,
                train_acc,
                test_acc: rec.test_acc.unwrap_or(f64::NAN),
                layer: l.layer,
                tl: l.tl,
                surrogate: l.surrogate,
            });
        }
        let first = rec.layers.first().map_or(f64::NAN, |l| l.tl);
        let last = rec.layers.last().map_or(f64::NAN, |l| l.tl);
        // Counting the input as the first layer, the first hidden
        // representation is the second.
        let gap = last - first;
        rec.extra.insert("tl_gap".into(), gap);
        self.ticks.push((rec.epoch, train_acc, last, gap));
        Ok(())
    }
}

fn grokking(ctx: &mut RunContext, seed: u64) -> CliResult<Value> {
    let cfg = ctx.cfg.clone();
    let split = prepare_dataset(&cfg, &ctx.data_dir)?;
    let probe = probe_subset(&split.train, cfg.cadence.tl_subset, cfg.seed);
    let mut log = GrokLog::default();
    let spec = RunSpec {
        run_id: ctx.run_id(seed, cfg.optimizer.rule().tag()),
        seed,
        optimizer: &cfg.optimizer,
        net: build_network(&cfg, &split.train, seed)?,
        loss: cfg.loss(),
        train: &split.train,
        test: split.test.as_ref(),
        probe: Some(&probe),
        classify: true,
    };
    let trainer = train_logged(ctx, spec, &mut log)?;
    ctx.write_csv(&ctx.csv_name("grokking", seed), &log.rows)?;
    let memorized = log.ticks.iter().find(|t| t.1 >= MEMORIZED_ACC).copied();
    let last = log.ticks.last().copied();
    let test = match split.test.as_ref() {
        Some(t) => evaluate(&trainer.net, cfg.loss(), t, true)?.1,
        None => None,
    };
    Ok(json!({
        "experiment": "grokking",
        "memorized_epoch": memorized.map(|t| t.0),
        "last_layer_tl_at_memorization": memorized.map(|t| t.2),
        "last_layer_tl_final": last.map(|t| t.2),
        "tl_gap_final": last.map(|t| t.3),
        "final_train_acc": last.map(|t| t.1),
        "final_test_acc": test,
    }))
}

// ------------------------------------------------------------ vcs vs agop

struct VcsAccumulator {
    diag: Vec<f64>,
}

impl Observer for VcsAccumulator {
    fn step(&mut self, v: &StepView) -> CliResult<()> {
        let h = &v.trace.hidden[0];
        let g = &v.grads.hidden[0];
        let gamma = v.lr;
        for (i, acc) in self.diag.iter_mut().enumerate() {
            let mut s = 0.0;
            for (hv, gv) in h.row(i).iter().zip(g.row(i)) {
                s += -2.0 * gamma * hv * gv + gamma * gamma * gv * gv;
            }
            *acc += s;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct DiagRow {
    feature: usize,
    gram_diag: f64,
    gram_diag_change: f64,
    vcs: f64,
    agop: f64,
}

fn gram_diag(w: &Matrix) -> Vec<f64> {
    let mut d = vec![0.0; w.cols()];
    for r in 0..w.rows() {
        for (acc, v) in d.iter_mut().zip(w.row(r)) {
            *acc += v * v;
        }
    }
    d
}

/// Diagonal of the output AGOP at the input, summed over output units.
fn agop_diag(net: &Network, x: &Matrix) -> CliResult<Vec<f64>> {
    let trace = net.forward(x)?;
    let n = x.cols() as f64;
    let mut d = vec![0.0; x.rows()];
    for c in 0..net.output_dim() {
        let g = net.output_gradients(&trace, c, OutputTarget::Output)?;
        for (i, acc) in d.iter_mut().enumerate() {
            *acc += g.hidden[0].row(i).iter().map(|v| v * v).sum::<f64>() / n;
        }
    }
    Ok(d)
}

fn vcs_vs_agop(ctx: &mut RunContext, seed: u64) -> CliResult<Value> {
    let cfg = ctx.cfg.clone();
    let split = prepare_dataset(&cfg, &ctx.data_dir)?;
    let probe = probe_subset(&split.train, cfg.cadence.tl_subset, cfg.seed);
    let net = build_network(&cfg, &split.train, seed)?;
    let initial = gram_diag(&net.layer(0).weight);
    let mut acc = VcsAccumulator {
        diag: vec![0.0; split.train.input_dim()],
    };
    let spec = RunSpec {
        run_id: ctx.run_id(seed, cfg.optimizer.rule().tag()),
        seed,
        optimizer: &cfg.optimizer,
        net,
        loss: cfg.loss(),
        train: &split.train,
        test: split.test.as_ref(),
        probe: Some(&probe),
        classify: true,
    };
    let trainer = train_logged(ctx, spec, &mut acc)?;
    let fin = gram_diag(&trainer.net.layer(0).weight);
    let change: Vec<f64> = fin.iter().zip(&initial).map(|(a, b)| a - b).collect();
    let agop = agop_diag(&trainer.net, &probe.x)?;
    let rows: Vec<DiagRow> = (0..fin.len())
        .map(|i| DiagRow {
            feature: i,
            gram_diag: fin[i],
            gram_diag_change: change[i],
            vcs: acc.diag[i],
            agop: agop[i],
        })
        .collect();
    ctx.write_csv(&ctx.csv_name("diag", seed), &rows)?;
    Ok(json!({
        "experiment": "vcs_vs_agop",
        "pearson_gram_vcs": pearson(&fin, &acc.diag)?,
        "pearson_gram_agop": pearson(&fin, &agop)?,
        "pearson_change_vcs": pearson(&change, &acc.diag)?,
    }))
}

// ----------------------------------------------------------- lazy vs rich

#[derive(Serialize)]
struct MovingRow {
    width: usize,
    epoch: usize,
    target_gap: f64,
    chase_gap: f64,
    loss_gap: f64,
}

struct MovingLog<'a> {
    width: usize,
    x: &'a Matrix,
    y: Vec<f64>,
    eps: f64,
    rows: Vec<MovingRow>,
}

impl Observer for MovingLog<'_> {
    fn tick(&mut self, rec: &mut MetricsRecord, trainer: &Trainer) -> CliResult<()> {
        let net = &trainer.net;
        let trace = net.forward(self.x)?;
        let h = &trace.hidden[net.depth() - 1];
        let d = moving_target_decomp(h, &self.y, trace.output().as_slice(), self.eps)?;
        rec.extra.insert("target_gap".into(), d.target_gap);
        rec.extra.insert("chase_gap".into(), d.chase_gap);
        rec.extra.insert("loss_gap".into(), d.loss_gap);
        self.rows.push(MovingRow {
            width: self.width,
            epoch: rec.epoch,
            target_gap: d.target_gap,
            chase_gap: d.chase_gap,
            loss_gap: d.loss_gap,
        });
        Ok(())
    }
}

fn lazy_vs_rich(ctx: &mut RunContext, seed: u64) -> CliResult<Value> {
    let cfg = ctx.cfg.clone();
    let split = prepare_dataset(&cfg, &ctx.data_dir)?;
    let ds = &split.train;
    let mut rows = Vec::new();
    let mut widths = Vec::new();
    for &w in &cfg.params.widths {
        let hidden = vec![w; cfg.network.hidden.len()];
        let spec = network_spec(&cfg.network, &hidden, ds.input_dim(), ds.target_dim(), cfg.readout());
        let mut log = MovingLog {
            width: w,
            x: &ds.x,
            y: ds.y.col(0),
            eps: cfg.params.ols_eps,
            rows: Vec::new(),
        };
        let run = RunSpec {
            run_id: ctx.run_id(seed, &format!("w{w}")),
            seed,
            optimizer: &cfg.optimizer,
            net: Network::init(&spec, seed)?,
            loss: Loss::Mse,
            train: ds,
            test: None,
            probe: None,
            classify: false,
        };
        train_logged(ctx, run, &mut log)?;
        let first = log.rows.first().map_or(f64::NAN, |r| r.target_gap);
        let last = log.rows.last().map_or(f64::NAN, |r| r.target_gap);
        widths.push(json!({
            "width": w,
            "initial_target_gap": first,
            "final_target_gap": last,
            "ratio": last / first,
            "final_loss_gap": log.rows.last().map(|r| r.loss_gap),
        }));
        rows.extend(log.rows);
    }
    ctx.write_csv(&ctx.csv_name("moving_target", seed), &rows)?;
    Ok(json!({ "experiment": "lazy_vs_rich", "ols_eps": cfg.params.ols_eps, "widths": widths }))
}

// ------------------------------------------------------------- swiss roll

struct Snapshots {
    nets: Vec<Network>,
}

impl Observer for Snapshots {
    fn epoch(&mut self, _epoch: usize, trainer: &Trainer, _stats: &EpochStats) -> CliResult<()> {
        self.nets.push(trainer.net.clone());
        Ok(())
    }
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: usize,
    tl: f64,
}

#[derive(Serialize)]
struct CloudRow {
    step: usize,
    sample: usize,
    x1: f64,
    x2: f64,
    target: f64,
}

fn swissroll_virtual(ctx: &mut RunContext, seed: u64) -> CliResult<Value> {
    let cfg = ctx.cfg.clone();
    let split = prepare_dataset(&cfg, &ctx.data_dir)?;
    let ds = &split.train;
    let net = build_network(&cfg, ds, seed)?;
    let mut snaps = Snapshots {
        nets: vec![net.clone()],
    };
    let spec = RunSpec {
        run_id: ctx.run_id(seed, cfg.optimizer.rule().tag()),
        seed,
        optimizer: &cfg.optimizer,
        net,
        loss: Loss::Mse,
        train: ds,
        test: None,
        probe: Some(ds),
        classify: false,
    };
    train_logged(ctx, spec, &mut snaps)?;
    // The network before each epoch drives one virtual step.
    snaps.nets.pop();
    let gamma = cfg.params.virtual_gamma.unwrap_or(cfg.optimizer.lr);
    let path = virtual_trajectory(
        &snaps.nets,
        &ds.x,
        &ds.y.transpose(),
        Loss::Mse,
        gamma,
        cfg.params.virtual_gradient,
    )?;
    let tl: Vec<f64> = path
        .iter()
        .map(|x| target_linearity(x, &ds.y, 0.0))
        .collect::<featlab::Result<_>>()?;
    let traj: Vec<TrajectoryRow> = tl
        .iter()
        .enumerate()
        .map(|(step, &tl)| TrajectoryRow { step, tl })
        .collect();
    ctx.write_csv(&ctx.csv_name("trajectory", seed), &traj)?;
    let every = cfg.cadence.every_epochs;
    let mut cloud = Vec::new();
    for (step, x) in path.iter().enumerate() {
        if step % every != 0 && step + 1 != path.len() {
            continue;
        }
        for b in 0..x.cols() {
            cloud.push(CloudRow {
                step,
                sample: b,
                x1: x[(0, b)],
                x2: x[(1, b)],
                target: ds.y[(b, 0)],
            });
        }
    }
    ctx.write_csv(&ctx.csv_name("cloud", seed), &cloud)?;
    let raw = tl[0];
    let fin = *tl.last().expect("trajectory starts with the raw cloud");
    Ok(json!({
        "experiment": "swissroll_virtual",
        "gamma": gamma,
        "virtual_gradient": cfg.params.virtual_gradient,
        "steps": path.len() - 1,
        "tl_raw": raw,
        "tl_final": fin,
        "tl_gain": fin - raw,
    }))
}

// -------------------------------------------------------------------- vae

#[derive(Serialize)]
struct VaeRow {
    beta: f64,
    epoch: usize,
    total: f64,
    reconstruction: f64,
    kl: f64,
    tl_latent: f64,
}

#[derive(Serialize)]
struct InterpRow {
    beta: f64,
    alpha: f64,
    lhs: f64,
    rhs: f64,
}

fn vae_networks(ctx: &RunContext, input: usize, seed: u64) -> CliResult<(Network, Network)> {
    let net = &ctx.cfg.network;
    let k = ctx.cfg.params.latent_dim;
    let mut enc = vec![input];
    enc.extend(&net.hidden);
    enc.push(2 * k);
    let mut dec = vec![k];
    dec.extend(net.hidden.iter().rev());
    dec.push(input);
    let spec = |dims: Vec<usize>, readout| NetworkSpec {
        dims,
        hidden: net.activation,
        readout,
        bias: net.bias,
        init: net.init,
    };
    Ok((
        Network::init(&spec(enc, Activation::Identity), seed)?,
        Network::init(
            &spec(dec, Activation::Sigmoid),
            SplitMix64::derive(seed, 0xDEC).next_u64(),
        )?,
    ))
}

fn vae_beta(ctx: &mut RunContext, seed: u64) -> CliResult<Value> {
    let cfg = ctx.cfg.clone();
    let split = prepare_dataset(&cfg, &ctx.data_dir)?;
    let ds = &split.train;
    let n = ds.len();
    let k = cfg.params.latent_dim;
    let pixels = informative_targets(&ds.x.transpose());
    let mut rows = Vec::new();
    let mut interp_rows = Vec::new();
    let mut per_beta = Vec::new();
    for &beta in &cfg.params.betas {
        let run_id = ctx.run_id(seed, &format!("beta{beta}"));
        let (enc, dec) = vae_networks(ctx, ds.input_dim(), seed)?;
        let mut model = VaeModel::new(enc, dec, beta)?;
        let o = &cfg.optimizer;
        let mut opt_e = OptimizerState::new(o.rule(), o.lr, o.weight_decay, &model.encoder)?;
        let mut opt_d = OptimizerState::new(o.rule(), o.lr, o.weight_decay, &model.decoder)?;
        let mut rng = SplitMix64::derive(seed, 0x5AE);
        let bs = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
        let mut step = 0u64;
        let mut last = (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        for epoch in 1..=cfg.epochs {
            let order = rng.permutation(n);
            let (mut tot, mut rec, mut kl) = (0.0, 0.0, 0.0);
            let snapshot = (model.encoder.clone(), model.decoder.clone());
            for idx in order.chunks(bs) {
                let x = ds.x.select_cols(idx);
                let noise = gaussian(k, idx.len(), &mut rng);
                let st = model.step(&x, &noise)?;
                if !st.total.is_finite() || !st.encoder.is_finite() || !st.decoder.is_finite() {
                    ctx.save_network(&run_id, "last_good_encoder", &snapshot.0)?;
                    ctx.save_network(&run_id, "last_good_decoder", &snapshot.1)?;
                    return Err(CliError::NumericalFailure(format!(
                        "non-finite VAE loss at step {}",
                        step + 1
                    )));
                }
                opt_e.step(&mut model.encoder, &st.encoder)?;
                opt_d.step(&mut model.decoder, &st.decoder)?;
                step += 1;
                let b = idx.len() as f64;
                tot += st.total * b;
                rec += st.reconstruction * b;
                kl += st.kl * b;
            }
            let nf = n as f64;
            if epoch % cfg.cadence.every_epochs != 0 && epoch != cfg.epochs {
                continue;
            }
            let (mu, _) = model.encode(&ds.x)?;
            let tl = target_linearity(&mu, &pixels, cfg.cadence.lambda)?;
            last = (tot / nf, rec / nf, kl / nf, tl);
            let mut r = ctx.record(&run_id, o.rule().tag(), step, epoch, tot / nf);
            r.extra.insert("beta".into(), beta);
            r.extra.insert("reconstruction".into(), rec / nf);
            r.extra.insert("kl".into(), kl / nf);
            r.extra.insert("tl_latent".into(), tl);
            ctx.write(r)?;
            rows.push(VaeRow {
                beta,
                epoch,
                total: tot / nf,
                reconstruction: rec / nf,
                kl: kl / nf,
                tl_latent: tl,
            });
        }
        ctx.save_network(&run_id, "encoder", &model.encoder)?;
        ctx.save_network(&run_id, "decoder", &model.decoder)?;
        let (mu, _) = model.encode(&ds.x)?;
        let gap = ols_interpolation_gap(&mu.transpose(), &ds.x.transpose(), &cfg.params.alphas)?;
        for (a, l) in gap.alphas.iter().zip(&gap.lhs) {
            interp_rows.push(InterpRow {
                beta,
                alpha: *a,
                lhs: *l,
                rhs: gap.rhs,
            });
        }
        per_beta.push(json!({
            "beta": beta,
            "final_total": last.0,
            "final_reconstruction": last.1,
            "final_kl": last.2,
            "final_tl_latent": last.3,
            "alphas": gap.alphas,
            "lhs": gap.lhs,
            "rhs": gap.rhs,
            "bound_holds": gap.holds(),
        }));
    }
    ctx.write_csv(&ctx.csv_name("vae_epochs", seed), &rows)?;
    ctx.write_csv(&ctx.csv_name("interpolation", seed), &interp_rows)?;
    Ok(json!({ "experiment": "vae_beta", "runs": per_beta }))
}

// ---------------------------------------------------------------- collapse

#[derive(Serialize)]
struct NcRow {
    epoch: usize,
    nc1: f64,
    nc2: f64,
    relative_distance: f64,
    relative_gap: f64,
}

struct NcLog<'a> {
    train: &'a Dataset,
    rows: Vec<NcRow>,
    last: Option<NcReport>,
}

fn nc_of(net: &Network, ds: &Dataset) -> CliResult<NcReport> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| CliError::ConfigInvalid("nc_probe needs labelled data".into()))?;
    let trace = net.forward(&ds.x)?;
    let h = &trace.hidden[net.depth() - 1];
    Ok(nc_probe(
        h,
        labels,
        ds.meta.classes,
        &net.layer(net.depth() - 1).weight,
    )?)
}

impl Observer for NcLog<'_> {
    fn tick(&mut self, rec: &mut MetricsRecord, trainer: &Trainer) -> CliResult<()> {
        let r = nc_of(&trainer.net, self.train)?;
        rec.extra.insert("nc1".into(), r.nc1);
        rec.extra.insert("nc2".into(), r.nc2);
        rec.extra.insert("gid_relative_distance".into(), r.relative_distance());
        rec.extra.insert("maximality_relative_gap".into(), r.relative_gap());
        self.rows.push(NcRow {
            epoch: rec.epoch,
            nc1: r.nc1,
            nc2: r.nc2,
            relative_distance: r.relative_distance(),
            relative_gap: r.relative_gap(),
        });
        self.last = Some(r);
        Ok(())
    }
}

fn nc_probe_experiment(ctx: &mut RunContext, seed: u64) -> CliResult<Value> {
    let cfg = ctx.cfg.clone();
    let etf = checks::etf_sweep(&cfg.params.etf_classes, 10, seed)?;
    ctx.write_csv(&ctx.csv_name("etf", seed), &etf)?;
    let trained = if cfg.dataset.is_image() {
        let split = prepare_dataset(&cfg, &ctx.data_dir)?;
        let probe = probe_subset(&split.train, cfg.cadence.tl_subset, cfg.seed);
        let mut log = NcLog {
            train: &split.train,
            rows: Vec::new(),
            last: None,
        };
        let spec = RunSpec {
            run_id: ctx.run_id(seed, cfg.optimizer.rule().tag()),
            seed,
            optimizer: &cfg.optimizer,
            net: build_network(&cfg, &split.train, seed)?,
            loss: cfg.loss(),
            train: &split.train,
            test: split.test.as_ref(),
            probe: Some(&probe),
            classify: true,
        };
        train_logged(ctx, spec, &mut log)?;
        ctx.write_csv(&ctx.csv_name("nc_by_epoch", seed), &log.rows)?;
        log.last.map(|r| {
            json!({
                "nc1": r.nc1,
                "nc2": r.nc2,
                "gid_distance": r.gid_distance,
                "gid_relative_distance": r.relative_distance(),
                "surrogate": r.surrogate,
                "max_surrogate": r.max_surrogate,
                "maximality_gap": r.maximality_gap,
                "maximality_relative_gap": r.relative_gap(),
            })
        })
    } else {
        let mut rec = ctx.record(&ctx.run_id(seed, "etf"), "none", 0, 0, 0.0);
        for r in &etf {
            rec.extra
                .insert(format!("etf{}_relative_distance", r.classes), r.relative_distance);
            rec.extra
                .insert(format!("etf{}_maximality_gap", r.classes), r.maximality_gap);
        }
        ctx.write(rec)?;
        None
    };
    Ok(json!({ "experiment": "nc_probe", "etf": etf, "trained": trained }))
}

// ------------------------------------------------------------- prop checks

fn prop_checks(ctx: &mut RunContext) -> CliResult<Value> {
    let cfg = ctx.cfg.clone();
    let rows = checks::run_all(cfg.params.trials_scale, cfg.seed)?;
    ctx.write_csv("checks.csv", &rows)?;
    let mut rec = ctx.record(&ctx.run_id(cfg.seed, "checks"), "none", 0, 0, 0.0);
    for r in &rows {
        rec.extra.insert(format!("{}.violations", r.check), r.violations as f64);
        rec.extra.insert(format!("{}.statistic", r.check), r.statistic);
    }
    ctx.write(rec)?;
    let pass = rows.iter().filter(|r| r.gating).all(|r| r.passed());
    Ok(json!({ "experiment": "prop_checks", "contracts_pass": pass, "checks": rows }))
}
