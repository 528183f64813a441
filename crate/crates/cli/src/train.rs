//! Dataset resolution, network construction and the mini-batch loop.

use std::path::{Path, PathBuf};

use featlab::data::{self, load_cifar_binary, load_idx, CifarVariant, Dataset, Standardizer};
use featlab::diagnostics::{layer_diagnostics, LayerDiagnostics};
use featlab::nn::{accuracy, Activation, ForwardTrace, GradientBundle, Loss, Network, NetworkSpec};
use featlab::optim::OptimizerState;
use featlab::{Matrix, SplitMix64};

use crate::config::{DatasetSpec, ExperimentConfig, NetworkConfig, OptimizerConfig};
use crate::error::{CliError, CliResult};

pub struct Split {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

fn require(path: PathBuf) -> CliResult<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::DatasetMissing(format!("{} not found", path.display())))
    }
}

fn cap(ds: Dataset, n: Option<usize>, seed: u64) -> Dataset {
    match n {
        Some(n) if n < ds.len() => ds.subsample(n, seed),
        _ => ds,
    }
}

fn finish(mut split: Split, centered: bool) -> CliResult<Split> {
    if centered {
        split.train = split.train.with_one_hot(true)?;
        split.test = split.test.map(|t| t.with_one_hot(true)).transpose()?;
    }
    Ok(split)
}

/// Loads or generates the configured dataset. Subsampling uses `seed`.
pub fn load_dataset(spec: &DatasetSpec, data_dir: &Path, seed: u64) -> CliResult<Split> {
    match *spec {
        DatasetSpec::Mnist { train, test, centered } => {
            let dir = data_dir.join("mnist");
            let tr = load_idx(
                &require(dir.join("train-images-idx3-ubyte"))?,
                &require(dir.join("train-labels-idx1-ubyte"))?,
            )?;
            let te = load_idx(
                &require(dir.join("t10k-images-idx3-ubyte"))?,
                &require(dir.join("t10k-labels-idx1-ubyte"))?,
            )?;
            finish(
                Split {
                    train: cap(tr, train, seed),
                    test: Some(cap(te, test, seed ^ 1)),
                },
                centered,
            )
        }
        DatasetSpec::Cifar10 { train, test, centered } => {
            let dir = data_dir.join("cifar-10-batches-bin");
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| require(dir.join(format!("data_batch_{i}.bin"))))
                .collect::<CliResult<_>>()?;
            let refs: Vec<&Path> = batches.iter().map(PathBuf::as_path).collect();
            let tr = load_cifar_binary(&refs, CifarVariant::Cifar10)?;
            let te = load_cifar_binary(&[&require(dir.join("test_batch.bin"))?], CifarVariant::Cifar10)?;
            finish(
                Split {
                    train: cap(tr, train, seed),
                    test: Some(cap(te, test, seed ^ 1)),
                },
                centered,
            )
        }
        DatasetSpec::Cifar100 { train, test, centered } => {
            let dir = data_dir.join("cifar-100-binary");
            let tr = load_cifar_binary(&[&require(dir.join("train.bin"))?], CifarVariant::Cifar100)?;
            let te = load_cifar_binary(&[&require(dir.join("test.bin"))?], CifarVariant::Cifar100)?;
            finish(
                Split {
                    train: cap(tr, train, seed),
                    test: Some(cap(te, test, seed ^ 1)),
                },
                centered,
            )
        }
        DatasetSpec::SwissRoll { n, noise } => Ok(Split {
            train: data::swiss_roll(n, noise, seed)?,
            test: None,
        }),
        DatasetSpec::Staircase { n, d } => Ok(Split {
            train: data::staircase(n, d, seed)?,
            test: None,
        }),
        DatasetSpec::ModAdd { p, train_frac } => {
            let (train, test) = data::mod_add(p, train_frac, seed)?;
            Ok(Split {
                train,
                test: Some(test),
            })
        }
        DatasetSpec::None => Err(CliError::ConfigInvalid("experiment needs a dataset".into())),
    }
}

/// Dataset for `cfg`, with image inputs standardized on the training split.
pub fn prepare_dataset(cfg: &ExperimentConfig, data_dir: &Path) -> CliResult<Split> {
    let mut split = load_dataset(&cfg.dataset, data_dir, cfg.seed)?;
    if cfg.standardize && cfg.dataset.is_image() {
        let s = Standardizer::fit(&split.train.x);
        split.train.x = s.apply(&split.train.x)?;
        if let Some(t) = split.test.as_mut() {
            t.x = s.apply(&t.x)?;
        }
    }
    Ok(split)
}

/// Seeded subset used for the per-layer diagnostics.
pub fn probe_subset(ds: &Dataset, n: usize, seed: u64) -> Dataset {
    if n >= ds.len() {
        ds.clone()
    } else {
        ds.subsample(n, seed ^ 0x7E57)
    }
}

/// Drops target columns that are constant over the samples; their R² is undefined.
pub fn informative_targets(y: &Matrix) -> Matrix {
    let means = y.col_means();
    let keep: Vec<usize> = (0..y.cols())
        .filter(|&c| (0..y.rows()).any(|r| y[(r, c)] != means[c]))
        .collect();
    if keep.len() == y.cols() {
        y.clone()
    } else {
        y.transpose().select_rows(&keep).transpose()
    }
}

pub fn network_spec(
    cfg: &NetworkConfig,
    hidden: &[usize],
    input: usize,
    output: usize,
    readout: Activation,
) -> NetworkSpec {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    NetworkSpec {
        dims,
        hidden: cfg.activation,
        readout,
        bias: cfg.bias,
        init: cfg.init,
    }
}

/// Network shaped for `ds` according to the experiment config.
pub fn build_network(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> CliResult<Network> {
    let spec = network_spec(
        &cfg.network,
        &cfg.network.hidden,
        ds.input_dim(),
        ds.target_dim(),
        cfg.readout(),
    );
    Ok(Network::init(&spec, seed)?)
}

/// Inputs and C×B targets of the samples at `idx`.
pub fn batch(ds: &Dataset, idx: &[usize]) -> (Matrix, Matrix) {
    (ds.x.select_cols(idx), ds.y.select_rows(idx).transpose())
}

pub struct StepView<'a> {
    pub net: &'a Network,
    pub x: &'a Matrix,
    pub trace: &'a ForwardTrace,
    pub grads: &'a GradientBundle,
    pub lr: f64,
}

pub struct EpochStats {
    pub mean_loss: f64,
    /// Largest whitened Gram deviation over the measured steps.
    pub gram_deviation: f64,
}

pub struct Trainer {
    pub net: Network,
    pub opt: OptimizerState,
    pub loss: Loss,
    /// 0 means full batch.
    pub batch_size: usize,
    /// Steps per epoch whose Gram deviation is measured; 0 = all.
    pub gram_steps: usize,
    pub step: u64,
    rng: SplitMix64,
}

impl Trainer {
    pub fn new(net: Network, opt: &OptimizerConfig, loss: Loss, batch_size: usize, seed: u64) -> CliResult<Self> {
        let state = OptimizerState::new(opt.rule(), opt.lr, opt.weight_decay, &net)?;
        Ok(Self {
            net,
            opt: state,
            loss,
            batch_size,
            gram_steps: 0,
            step: 0,
            rng: SplitMix64::derive(seed, 0xBA7C),
        })
    }

    /// One shuffled pass over `ds`. `on_step` sees each batch before the update.
    pub fn epoch(
        &mut self,
        ds: &Dataset,
        mut on_step: impl FnMut(&StepView) -> CliResult<()>,
    ) -> CliResult<EpochStats> {
        let n = ds.len();
        let bs = if self.batch_size == 0 {
            n
        } else {
            self.batch_size.min(n)
        };
        let order = if bs == n {
            (0..n).collect()
        } else {
            self.rng.permutation(n)
        };
        let steps = n.div_ceil(bs);
        let every = steps.checked_div(self.gram_steps).map_or(1, |e| e.max(1));
        let mut total = 0.0;
        let mut gram_deviation: f64 = 0.0;
        for (i, idx) in order.chunks(bs).enumerate() {
            let (x, y) = batch(ds, idx);
            let trace = self.net.forward(&x)?;
            let (loss, grads) = self.net.backward(&trace, self.loss, &y)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(CliError::NumericalFailure(format!(
                    "non-finite loss at step {}",
                    self.step + 1
                )));
            }
            on_step(&StepView {
                net: &self.net,
                x: &x,
                trace: &trace,
                grads: &grads,
                lr: self.opt.lr,
            })?;
            let track = i % every == 0;
            self.opt.set_gram_tracking(track);
            self.opt.step(&mut self.net, &grads)?;
            if track {
                gram_deviation = self.opt.gram_deviation().iter().fold(gram_deviation, |a, &b| a.max(b));
            }
            self.step += 1;
            total += loss * idx.len() as f64;
        }
        if !self.net.is_finite() {
            return Err(CliError::NumericalFailure(format!(
                "non-finite weights after step {}",
                self.step
            )));
        }
        Ok(EpochStats {
            mean_loss: total / n as f64,
            gram_deviation,
        })
    }
}

/// Mean loss and (for classification) accuracy, evaluated in chunks.
pub fn evaluate(net: &Network, loss: Loss, ds: &Dataset, classify: bool) -> CliResult<(f64, Option<f64>)> {
    let n = ds.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut hits = 0.0;
    for chunk in idx.chunks(1000) {
        let (x, y) = batch(ds, chunk);
        let trace = net.forward(&x)?;
        let (l, _) = net.loss_and_logit_grad(&trace, loss, &y)?;
        total += l * chunk.len() as f64;
        if classify {
            hits += accuracy(trace.output(), &y) * chunk.len() as f64;
        }
    }
    Ok((total / n as f64, classify.then_some(hits / n as f64)))
}

/// Diagnostics for every hidden representation `h_1 … h_{L−1}` on `probe`.
pub fn hidden_layer_diagnostics(
    net: &Network,
    loss: Loss,
    probe: &Dataset,
    lambda: f64,
    gamma: f64,
) -> CliResult<Vec<LayerDiagnostics>> {
    let idx: Vec<usize> = (0..probe.len()).collect();
    let (x, y) = batch(probe, &idx);
    let trace = net.forward(&x)?;
    let (_, grads) = net.backward(&trace, loss, &y)?;
    let targets = informative_targets(&probe.y);
    (1..net.depth())
        .map(|l| Ok(layer_diagnostics(net, &trace, &grads, &targets, l, lambda, gamma)?))
        .collect()
}
