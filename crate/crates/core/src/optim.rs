//! Parameter updates: momentum SGD, Adam/AdamW and the Gram-whitened step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{polar_orthogonalize, Matrix};
use crate::nn::{GradientBundle, Network};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    /// Weight decay enters the gradient (L2).
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    /// Weight decay is decoupled from the moment estimates.
    AdamW {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    /// SGD whose hidden-layer steps are rotated back onto the plain-GD Gram.
    WhitenedSgd {
        #[serde(default)]
        momentum: f64,
    },
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

impl Rule {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Sgd { .. } => "sgd",
            Self::Adam { .. } => "adam",
            Self::AdamW { .. } => "adamw",
            Self::WhitenedSgd { .. } => "whitened_sgd",
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Slot {
    fn new(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }
}

/// Optimizer hyperparameters plus per-layer buffers shaped like the network.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub rule: Rule,
    pub lr: f64,
    pub weight_decay: f64,
    step: u64,
    weights: Vec<Slot>,
    biases: Vec<Option<Slot>>,
    track_gram: bool,
    gram_deviation: Vec<f64>,
}

impl OptimizerState {
    pub fn new(rule: Rule, lr: f64, weight_decay: f64, net: &Network) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be ≥ 0, got {weight_decay}"
            )));
        }
        match rule {
            Rule::Sgd { momentum } | Rule::WhitenedSgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::InvalidArgument(format!(
                    "momentum must be in [0, 1), got {momentum}"
                )));
            }
            Rule::Adam { beta1, beta2, eps } | Rule::AdamW { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                return Err(Error::InvalidArgument(
                    "adam betas must be in [0, 1) and eps > 0".into(),
                ));
            }
            _ => {}
        }
        Ok(Self {
            rule,
            lr,
            weight_decay,
            step: 0,
            weights: net.layers().iter().map(|l| Slot::new(l.weight.len())).collect(),
            biases: net
                .layers()
                .iter()
                .map(|l| l.bias.as_ref().map(|b| Slot::new(b.len())))
                .collect(),
            track_gram: false,
            gram_deviation: vec![0.0; net.depth()],
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// When on, whitened steps record `‖(W⁺)ᵀW⁺ − ŴᵀŴ‖_F / ‖ŴᵀŴ‖_F` per
    /// layer. Costs two extra Gram products per layer and step.
    pub fn set_gram_tracking(&mut self, on: bool) {
        self.track_gram = on;
    }

    /// Relative Gram deviations of the last whitened step (0 for plain layers).
    pub fn gram_deviation(&self) -> &[f64] {
        &self.gram_deviation
    }

    /// Applies one update according to the configured rule.
    pub fn step(&mut self, net: &mut Network, grads: &GradientBundle) -> Result<()> {
        self.check_shapes(net, grads)?;
        self.step += 1;
        match self.rule {
            Rule::Sgd { momentum } => {
                for l in 0..net.depth() {
                    self.sgd_weight(net, grads, l, momentum);
                    self.sgd_bias(net, grads, l, momentum);
                }
            }
            Rule::Adam { beta1, beta2, eps } => self.adam(net, grads, beta1, beta2, eps, false),
            Rule::AdamW { beta1, beta2, eps } => self.adam(net, grads, beta1, beta2, eps, true),
            Rule::WhitenedSgd { momentum } => {
                let last = net.depth() - 1;
                for l in 0..net.depth() {
                    if l == last {
                        self.sgd_weight(net, grads, l, momentum);
                    } else {
                        let direction = self.momentum_direction(net, grads, l, momentum);
                        let w = &net.layers()[l].weight;
                        let target = w.sub(&direction.scale(self.lr))?;
                        let next = whiten(w, &target)?;
                        if self.track_gram {
                            let want = target.t_matmul(&target)?;
                            let got = next.t_matmul(&next)?;
                            self.gram_deviation[l] =
                                got.sub(&want)?.frobenius_norm() / want.frobenius_norm().max(f64::MIN_POSITIVE);
                        }
                        net.layers_mut()[l].weight = next;
                    }
                    self.sgd_bias(net, grads, l, momentum);
                }
            }
        }
        Ok(())
    }

    fn check_shapes(&self, net: &Network, grads: &GradientBundle) -> Result<()> {
        if grads.weights.len() != net.depth() || self.weights.len() != net.depth() {
            return Err(Error::ShapeMismatch {
                op: "optimizer layers",
                left: (net.depth(), 1),
                right: (grads.weights.len(), 1),
            });
        }
        for (l, layer) in net.layers().iter().enumerate() {
            if grads.weights[l].shape() != layer.weight.shape() || self.weights[l].first.len() != layer.weight.len() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer weights",
                    left: layer.weight.shape(),
                    right: grads.weights[l].shape(),
                });
            }
            let want = layer.bias.as_ref().map(Vec::len);
            let got = grads.biases.get(l).and_then(|b| b.as_ref().map(Vec::len));
            if want != got {
                return Err(Error::ShapeMismatch {
                    op: "optimizer bias",
                    left: (want.unwrap_or(0), 1),
                    right: (got.unwrap_or(0), 1),
                });
            }
        }
        Ok(())
    }

    /// `v ← μ v + (∇W + λ W)`, returned as a matrix shaped like `W`.
    fn momentum_direction(&mut self, net: &Network, grads: &GradientBundle, l: usize, momentum: f64) -> Matrix {
        let w = &net.layers()[l].weight;
        let g = &grads.weights[l];
        let buf = &mut self.weights[l].first;
        for ((v, &gv), &wv) in buf.iter_mut().zip(g.as_slice()).zip(w.as_slice()) {
            *v = momentum * *v + gv + self.weight_decay * wv;
        }
        Matrix::from_vec(w.rows(), w.cols(), buf.clone()).expect("buffer mirrors weight")
    }

    fn sgd_weight(&mut self, net: &mut Network, grads: &GradientBundle, l: usize, momentum: f64) {
        let wd = self.weight_decay;
        let lr = self.lr;
        let buf = &mut self.weights[l].first;
        let w = net.layers_mut()[l].weight.as_mut_slice();
        for ((wv, v), &gv) in w.iter_mut().zip(buf.iter_mut()).zip(grads.weights[l].as_slice()) {
            *v = momentum * *v + gv + wd * *wv;
            *wv -= lr * *v;
        }
    }

    /// Biases take plain momentum steps without weight decay.
    fn sgd_bias(&mut self, net: &mut Network, grads: &GradientBundle, l: usize, momentum: f64) {
        let lr = self.lr;
        if let (Some(b), Some(g), Some(slot)) = (
            net.layers_mut()[l].bias.as_mut(),
            grads.biases[l].as_ref(),
            self.biases[l].as_mut(),
        ) {
            for ((bv, v), &gv) in b.iter_mut().zip(slot.first.iter_mut()).zip(g) {
                *v = momentum * *v + gv;
                *bv -= lr * *v;
            }
        }
    }

    fn adam(&mut self, net: &mut Network, grads: &GradientBundle, b1: f64, b2: f64, eps: f64, decoupled: bool) {
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, wd) = (self.lr, self.weight_decay);
        let update = |p: &mut [f64], g: &[f64], slot: &mut Slot, decay: f64| {
            for i in 0..p.len() {
                let mut gi = g[i];
                if decoupled {
                    p[i] -= lr * decay * p[i];
                } else {
                    gi += decay * p[i];
                }
                slot.first[i] = b1 * slot.first[i] + (1.0 - b1) * gi;
                slot.second[i] = b2 * slot.second[i] + (1.0 - b2) * gi * gi;
                let m_hat = slot.first[i] / c1;
                let v_hat = slot.second[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for l in 0..net.depth() {
            let layer = &mut net.layers_mut()[l];
            update(
                layer.weight.as_mut_slice(),
                grads.weights[l].as_slice(),
                &mut self.weights[l],
                wd,
            );
            if let (Some(b), Some(g), Some(slot)) =
                (layer.bias.as_mut(), grads.biases[l].as_ref(), self.biases[l].as_mut())
            {
                update(b, g, slot, 0.0);
            }
        }
    }
}

/// Rotates the plain step `target = W − γ∇W` by `Q = polar(W targetᵀ)`, the
/// orthogonal map that brings it closest to `W` while keeping its Gram.
pub fn whiten(w: &Matrix, target: &Matrix) -> Result<Matrix> {
    let q = polar_orthogonalize(&w.matmul_t(target)?)?;
    q.matmul(target)
}
