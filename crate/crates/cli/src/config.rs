//! Strict JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use featlab::diagnostics::VirtualGradient;
use featlab::nn::{Activation, InitScheme, Loss};
use featlab::optim::Rule;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    WhiteningCompare,
    TlDynamics,
    VcsVsAgop,
    LazyVsRich,
    SwissrollVirtual,
    RandomLabel,
    Grokking,
    VaeBeta,
    NcProbe,
    PropChecks,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Self::WhiteningCompare,
        Self::TlDynamics,
        Self::VcsVsAgop,
        Self::LazyVsRich,
        Self::SwissrollVirtual,
        Self::RandomLabel,
        Self::Grokking,
        Self::VaeBeta,
        Self::NcProbe,
        Self::PropChecks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::WhiteningCompare => "whitening_compare",
            Self::TlDynamics => "tl_dynamics",
            Self::VcsVsAgop => "vcs_vs_agop",
            Self::LazyVsRich => "lazy_vs_rich",
            Self::SwissrollVirtual => "swissroll_virtual",
            Self::RandomLabel => "random_label",
            Self::Grokking => "grokking",
            Self::VaeBeta => "vae_beta",
            Self::NcProbe => "nc_probe",
            Self::PropChecks => "prop_checks",
        }
    }
}

fn default_noise() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum DatasetSpec {
    /// IDX files under `<data dir>/mnist/`.
    Mnist {
        #[serde(default)]
        train: Option<usize>,
        #[serde(default)]
        test: Option<usize>,
        #[serde(default)]
        centered: bool,
    },
    /// Binary batches under `<data dir>/cifar-10-batches-bin/`.
    Cifar10 {
        #[serde(default)]
        train: Option<usize>,
        #[serde(default)]
        test: Option<usize>,
        #[serde(default)]
        centered: bool,
    },
    /// `train.bin` and `test.bin` under `<data dir>/cifar-100-binary/`.
    Cifar100 {
        #[serde(default)]
        train: Option<usize>,
        #[serde(default)]
        test: Option<usize>,
        #[serde(default)]
        centered: bool,
    },
    SwissRoll {
        n: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    Staircase {
        n: usize,
        d: usize,
    },
    ModAdd {
        p: usize,
        train_frac: f64,
    },
    #[default]
    None,
}

impl DatasetSpec {
    pub fn is_image(&self) -> bool {
        matches!(self, Self::Mnist { .. } | Self::Cifar10 { .. } | Self::Cifar100 { .. })
    }

    pub fn is_classification(&self) -> bool {
        self.is_image() || matches!(self, Self::ModAdd { .. })
    }
}

fn default_true() -> bool {
    true
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_init() -> InitScheme {
    InitScheme::He
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden widths; input and output sizes come from the dataset.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Defaults to sigmoid for bce and identity otherwise.
    #[serde(default)]
    pub readout: Option<Activation>,
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default = "default_init")]
    pub init: InitScheme,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Relu,
            readout: None,
            bias: true,
            init: InitScheme::He,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleTag {
    Sgd,
    Adam,
    Adamw,
    WhitenedSgd,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rule: RuleTag,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            rule: RuleTag::Sgd,
            lr,
            weight_decay: 0.0,
            momentum: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn with_rule(mut self, rule: RuleTag) -> Self {
        self.rule = rule;
        self
    }

    pub fn rule(&self) -> Rule {
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        match self.rule {
            RuleTag::Sgd => Rule::Sgd {
                momentum: self.momentum,
            },
            RuleTag::WhitenedSgd => Rule::WhitenedSgd {
                momentum: self.momentum,
            },
            RuleTag::Adam => Rule::Adam { beta1, beta2, eps },
            RuleTag::Adamw => Rule::AdamW { beta1, beta2, eps },
        }
    }

    fn validate(&self, what: &str) -> CliResult<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return invalid(format!("{what}.lr must be a positive step size, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return invalid(format!("{what}.weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("{what}.momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return invalid(format!("{what}: betas must be in [0, 1) and eps > 0"));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::sgd(0.01)
    }
}

fn one() -> usize {
    1
}
fn ten() -> usize {
    10
}
fn default_tl_subset() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cadence {
    /// Diagnostics every this many epochs (and always at the last one).
    #[serde(default = "one")]
    pub every_epochs: usize,
    /// Steps per epoch whose whitened Gram deviation is measured; 0 = all.
    #[serde(default = "ten")]
    pub gram_steps_per_epoch: usize,
    /// Training samples used for TL and the other layer diagnostics.
    #[serde(default = "default_tl_subset")]
    pub tl_subset: usize,
    /// Ridge λ for TL (0 applies the relative jitter).
    #[serde(default)]
    pub lambda: f64,
    /// Write a checkpoint every this many epochs; 0 keeps only the final and last-good ones.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for Cadence {
    fn default() -> Self {
        Self {
            every_epochs: 1,
            gram_steps_per_epoch: 10,
            tl_subset: 2000,
            lambda: 0.0,
            checkpoint_every: 0,
        }
    }
}

fn default_widths() -> Vec<usize> {
    vec![32, 128, 512, 1024]
}
fn default_corruption() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn default_betas() -> Vec<f64> {
    vec![0.1]
}
fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}
fn default_latent() -> usize {
    8
}
fn default_ols_eps() -> f64 {
    1e-6
}
fn default_etf_classes() -> Vec<usize> {
    vec![2, 3, 5, 10]
}
fn default_trials_scale() -> f64 {
    1.0
}

/// Experiment-specific knobs; each experiment reads only its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// lazy_vs_rich: hidden widths, one run each.
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    /// random_label: corrupted-label fractions, one run each.
    #[serde(default = "default_corruption")]
    pub corruption: Vec<f64>,
    /// vae_beta: KL weights, one run each.
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    /// vae_beta: interpolation weights for the OLS bound.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// swissroll_virtual: step of the virtual input update (defaults to the learning rate).
    #[serde(default)]
    pub virtual_gamma: Option<f64>,
    /// swissroll_virtual: take each virtual step's gradient at the original
    /// input (`input`) or at the current virtual point (`trajectory`).
    #[serde(default)]
    pub virtual_gradient: VirtualGradient,
    /// lazy_vs_rich: ridge ε of `y_OLS`.
    #[serde(default = "default_ols_eps")]
    pub ols_eps: f64,
    /// nc_probe: class counts of the constructed ETF checks.
    #[serde(default = "default_etf_classes")]
    pub etf_classes: Vec<usize>,
    /// prop_checks: multiplier on every check's trial count.
    #[serde(default = "default_trials_scale")]
    pub trials_scale: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            widths: default_widths(),
            corruption: default_corruption(),
            betas: default_betas(),
            latent_dim: default_latent(),
            alphas: default_alphas(),
            virtual_gamma: None,
            virtual_gradient: VirtualGradient::Input,
            ols_eps: default_ols_eps(),
            etf_classes: default_etf_classes(),
            trials_scale: default_trials_scale(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub dataset: DatasetSpec,
    /// Per-feature standardization of image inputs, fitted on the training split.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// whitening_compare: optimizers run side by side (each for every seed).
    #[serde(default)]
    pub compare: Vec<OptimizerConfig>,
    /// Defaults to softmax_ce for classification and mse otherwise.
    #[serde(default)]
    pub loss: Option<Loss>,
    #[serde(default)]
    pub epochs: usize,
    /// 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub cadence: Cadence,
    #[serde(default)]
    pub seed: u64,
    /// Number of consecutive seeds starting at `seed`.
    #[serde(default = "one")]
    pub seeds: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: Params,
}

fn invalid<T>(msg: String) -> CliResult<T> {
    Err(CliError::ConfigInvalid(msg))
}

fn is_prime(p: usize) -> bool {
    p >= 2 && (2..).take_while(|k| k * k <= p).all(|k| !p.is_multiple_of(k))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical compact JSON used for hashing and archiving.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn loss(&self) -> Loss {
        self.loss
            .unwrap_or(if self.dataset.is_classification() && !self.centered_targets() {
                Loss::SoftmaxCe
            } else {
                Loss::Mse
            })
    }

    pub fn readout(&self) -> Activation {
        self.network.readout.unwrap_or(match self.loss() {
            Loss::Bce => Activation::Sigmoid,
            _ => Activation::Identity,
        })
    }

    pub fn centered_targets(&self) -> bool {
        matches!(
            self.dataset,
            DatasetSpec::Mnist { centered: true, .. }
                | DatasetSpec::Cifar10 { centered: true, .. }
                | DatasetSpec::Cifar100 { centered: true, .. }
        )
    }

    fn trains(&self) -> bool {
        self.experiment != Experiment::PropChecks
            && !(self.experiment == Experiment::NcProbe && self.dataset == DatasetSpec::None)
    }

    /// Checks every field; nothing is computed before this passes.
    pub fn validate(&self) -> CliResult<()> {
        use Experiment as E;
        let exp = self.experiment;
        let ds = &self.dataset;
        let dataset_ok = match exp {
            E::PropChecks => matches!(ds, DatasetSpec::None),
            E::NcProbe => matches!(ds, DatasetSpec::None) || ds.is_image(),
            E::LazyVsRich => matches!(ds, DatasetSpec::Staircase { .. }),
            E::SwissrollVirtual => matches!(ds, DatasetSpec::SwissRoll { .. }),
            E::Grokking => matches!(ds, DatasetSpec::ModAdd { .. }),
            E::WhiteningCompare | E::TlDynamics | E::VcsVsAgop | E::RandomLabel | E::VaeBeta => ds.is_image(),
        };
        if !dataset_ok {
            return invalid(format!("dataset {ds:?} is not usable by {}", exp.name()));
        }
        match *ds {
            DatasetSpec::Mnist { train, test, .. }
            | DatasetSpec::Cifar10 { train, test, .. }
            | DatasetSpec::Cifar100 { train, test, .. } => {
                if train == Some(0) || test == Some(0) {
                    return invalid("dataset train/test sizes must be positive".into());
                }
            }
            DatasetSpec::SwissRoll { n, noise } => {
                if n < 2 || !(noise >= 0.0) || !noise.is_finite() {
                    return invalid(format!(
                        "swiss_roll needs n ≥ 2 and noise ≥ 0, got n={n}, noise={noise}"
                    ));
                }
            }
            DatasetSpec::Staircase { n, d } => {
                if n < 2 || d < 4 {
                    return invalid(format!("staircase needs n ≥ 2 and d ≥ 4, got n={n}, d={d}"));
                }
            }
            DatasetSpec::ModAdd { p, train_frac } => {
                if !is_prime(p) {
                    return invalid(format!("mod_add modulus must be prime, got {p}"));
                }
                if !(train_frac > 0.0 && train_frac < 1.0) {
                    return invalid(format!("mod_add train_frac must be in (0, 1), got {train_frac}"));
                }
            }
            DatasetSpec::None => {}
        }

        if self.trains() {
            if self.epochs == 0 {
                return invalid(format!("{} needs epochs ≥ 1", exp.name()));
            }
            if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
                return invalid("network.hidden must list at least one positive width".into());
            }
        }
        if self.seeds == 0 {
            return invalid("seeds must be ≥ 1".into());
        }
        self.optimizer.validate("optimizer")?;
        for (i, o) in self.compare.iter().enumerate() {
            o.validate(&format!("compare[{i}]"))?;
        }
        if exp == E::WhiteningCompare && self.compare.is_empty() {
            return invalid("whitening_compare needs a nonempty compare list".into());
        }

        let loss = self.loss();
        let readout = self.readout();
        match loss {
            Loss::Bce if readout != Activation::Sigmoid => {
                return invalid("bce loss needs a sigmoid readout".into());
            }
            Loss::SoftmaxCe if readout != Activation::Identity => {
                return invalid("softmax_ce loss needs an identity readout".into());
            }
            Loss::Bce if ds.is_classification() => {
                return invalid("bce loss needs a scalar 0/1 target".into());
            }
            Loss::SoftmaxCe if !ds.is_classification() && self.trains() => {
                return invalid("softmax_ce needs a classification dataset".into());
            }
            _ => {}
        }
        if exp == E::VaeBeta && self.loss.is_some_and(|l| l != Loss::Mse) {
            return invalid("vae_beta reconstructs with mse".into());
        }
        if exp == E::VaeBeta && self.standardize {
            return invalid("vae_beta decodes [0, 1] pixels through a sigmoid; set standardize to false".into());
        }
        if self.centered_targets() && loss != Loss::Mse {
            return invalid("centered one-hot targets need the mse loss".into());
        }

        let c = &self.cadence;
        if c.every_epochs == 0 {
            return invalid("cadence.every_epochs must be ≥ 1".into());
        }
        if c.tl_subset < 2 {
            return invalid("cadence.tl_subset must be ≥ 2".into());
        }
        if !(c.lambda >= 0.0) || !c.lambda.is_finite() {
            return invalid(format!("cadence.lambda must be ≥ 0, got {}", c.lambda));
        }

        let p = &self.params;
        if p.widths.is_empty() || p.widths.contains(&0) {
            return invalid("params.widths must list positive widths".into());
        }
        if p.corruption.is_empty() || p.corruption.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("params.corruption values must lie in [0, 1]".into());
        }
        if p.betas.is_empty() || p.betas.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return invalid("params.betas must be finite and ≥ 0".into());
        }
        if p.latent_dim == 0 {
            return invalid("params.latent_dim must be ≥ 1".into());
        }
        if p.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return invalid("params.alphas must lie in [0, 1]".into());
        }
        if let Some(g) = p.virtual_gamma {
            if !(g > 0.0) || !g.is_finite() {
                return invalid(format!("params.virtual_gamma must be positive, got {g}"));
            }
        }
        if !(p.ols_eps >= 0.0) || !p.ols_eps.is_finite() {
            return invalid(format!("params.ols_eps must be ≥ 0, got {}", p.ols_eps));
        }
        if p.etf_classes.iter().any(|&c| c < 2) {
            return invalid("params.etf_classes must all be ≥ 2".into());
        }
        if !(p.trials_scale > 0.0) || !p.trials_scale.is_finite() {
            return invalid("params.trials_scale must be positive".into());
        }
        Ok(())
    }

    /// Shipped defaults for each experiment, sized for a single CPU core.
    pub fn preset(experiment: Experiment) -> Self {
        use Experiment as E;
        let mut cfg = Self {
            experiment,
            dataset: DatasetSpec::None,
            standardize: true,
            network: NetworkConfig::default(),
            optimizer: OptimizerConfig::sgd(0.01),
            compare: Vec::new(),
            loss: None,
            epochs: 20,
            batch_size: 128,
            cadence: Cadence::default(),
            seed: 0,
            seeds: 1,
            out_dir: None,
            params: Params::default(),
        };
        let cifar10 = |train| DatasetSpec::Cifar10 {
            train: Some(train),
            test: Some(1000),
            centered: false,
        };
        match experiment {
            E::WhiteningCompare => {
                cfg.dataset = DatasetSpec::Mnist {
                    train: None,
                    test: None,
                    centered: false,
                };
                cfg.compare = vec![
                    OptimizerConfig::sgd(0.05),
                    OptimizerConfig::sgd(0.05).with_rule(RuleTag::WhitenedSgd),
                ];
                cfg.seeds = 3;
                cfg.cadence.every_epochs = 5;
            }
            E::TlDynamics => {
                cfg.dataset = cifar10(5000);
                cfg.network.hidden = vec![256; 4];
                cfg.network.activation = Activation::Gelu;
                cfg.optimizer = OptimizerConfig::sgd(0.005);
                cfg.epochs = 30;
            }
            E::VcsVsAgop => {
                cfg.dataset = cifar10(5000);
                cfg.network.hidden = vec![256];
                cfg.network.activation = Activation::Gelu;
                cfg.optimizer = OptimizerConfig::sgd(0.05);
                cfg.cadence.every_epochs = 5;
            }
            E::LazyVsRich => {
                cfg.dataset = DatasetSpec::Staircase { n: 1000, d: 10 };
                cfg.network = NetworkConfig {
                    hidden: vec![32, 32],
                    activation: Activation::Relu,
                    readout: None,
                    bias: false,
                    init: InitScheme::Ntk,
                };
                cfg.params.widths = vec![32, 1024];
                cfg.epochs = 2000;
                cfg.batch_size = 0;
                cfg.cadence.every_epochs = 20;
            }
            E::SwissrollVirtual => {
                cfg.dataset = DatasetSpec::SwissRoll { n: 1000, noise: 0.05 };
                cfg.network.hidden = vec![64, 64];
                cfg.optimizer = OptimizerConfig::sgd(0.05);
                cfg.epochs = 100;
                cfg.batch_size = 0;
                cfg.cadence.every_epochs = 10;
            }
            E::RandomLabel => {
                cfg.dataset = cifar10(2000);
                cfg.network.hidden = vec![256, 256];
                cfg.optimizer = OptimizerConfig::sgd(0.005);
                cfg.epochs = 200;
                cfg.cadence.every_epochs = 10;
            }
            E::Grokking => {
                cfg.dataset = DatasetSpec::ModAdd { p: 61, train_frac: 0.5 };
                cfg.network.hidden = vec![256, 256];
                cfg.optimizer = OptimizerConfig {
                    weight_decay: 0.5,
                    ..OptimizerConfig::sgd(0.001).with_rule(RuleTag::Adamw)
                };
                cfg.epochs = 500;
            }
            E::VaeBeta => {
                cfg.dataset = DatasetSpec::Mnist {
                    train: Some(1000),
                    test: None,
                    centered: false,
                };
                cfg.standardize = false;
                cfg.network.hidden = vec![256];
                cfg.optimizer = OptimizerConfig::sgd(0.001).with_rule(RuleTag::Adam);
                cfg.batch_size = 64;
            }
            E::NcProbe => {
                cfg.dataset = DatasetSpec::Mnist {
                    train: Some(2000),
                    test: None,
                    centered: true,
                };
                cfg.optimizer = OptimizerConfig::sgd(0.01);
                cfg.epochs = 30;
            }
            E::PropChecks => {
                cfg.epochs = 0;
            }
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::preset(e);
            cfg.validate().unwrap_or_else(|err| panic!("{}: {err}", e.name()));
            let back = ExperimentConfig::from_json(&cfg.canonical_json()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let ok = r#"{"experiment": "prop_checks"}"#;
        assert!(ExperimentConfig::from_json(ok).is_ok());
        for bad in [
            r#"{"experiment": "prop_checks", "bogus": 1}"#,
            r#"{"experiment": "prop_checks", "cadence": {"every": 2}}"#,
            r#"{"experiment": "lazy_vs_rich", "dataset": {"kind": "staircase", "n": 10, "d": 10, "x": 1}, "epochs": 1}"#,
            r#"{"experiment": "nope"}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(bad), Err(CliError::ConfigInvalid(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn negative_step_is_rejected() {
        let mut cfg = ExperimentConfig::preset(Experiment::SwissrollVirtual);
        cfg.optimizer.lr = -0.1;
        assert!(matches!(cfg.validate(), Err(CliError::ConfigInvalid(m)) if m.contains("lr")));
        let mut cfg = ExperimentConfig::preset(Experiment::SwissrollVirtual);
        cfg.params.virtual_gamma = Some(-1.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn incompatible_choices_are_rejected() {
        let mut cfg = ExperimentConfig::preset(Experiment::Grokking);
        cfg.dataset = DatasetSpec::Staircase { n: 10, d: 10 };
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::preset(Experiment::TlDynamics);
        cfg.network.readout = Some(Activation::Sigmoid);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::preset(Experiment::Grokking);
        cfg.dataset = DatasetSpec::ModAdd { p: 60, train_frac: 0.5 };
        assert!(cfg.validate().is_err());
    }
}
