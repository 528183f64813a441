use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::activation::{sigmoid, softplus, Activation};
use crate::rng::SplitMix64;

/// One dense layer `h ↦ σ(W h + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>, activation: Activation) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.rows() {
                return Err(Error::ShapeMismatch {
                    op: "layer bias",
                    left: weight.shape(),
                    right: (b.len(), 1),
                });
            }
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Weight initialization scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// `N(0, 2/fan_in)`.
    He,
    /// `N(0, 1/fan_in)`.
    Ntk,
}

/// Layer widths plus activations, enough to build a fresh [`Network`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `d₀, d₁, …, d_L`; at least two entries.
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub readout: Activation,
    pub bias: bool,
    pub init: InitScheme,
}

/// Feed-forward stack of dense layers. The last layer is the readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Cached activations for one batch (samples are columns).
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `h_0 = X, h_1, …, h_L`; `h_L` is the network output.
    pub hidden: Vec<Matrix>,
    /// `z_l = W_l h_l + b_l` for every layer.
    pub pre: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.hidden.last().expect("trace always holds the input")
    }

    /// Readout pre-activation (logits).
    pub fn logits(&self) -> &Matrix {
        self.pre.last().expect("network has at least one layer")
    }

    pub fn batch(&self) -> usize {
        self.hidden[0].cols()
    }
}

/// Gradients of a scalar objective for one batch.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    /// `∇W_l`, same shapes as the weights.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Option<Vec<f64>>>,
    /// `∇h_l` for the input of each layer (`hidden[0]` is the input gradient).
    pub hidden: Vec<Matrix>,
}

impl GradientBundle {
    pub fn zeros_like(net: &Network, batch: usize) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.fan_out(), l.fan_in()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| l.bias.as_ref().map(|b| vec![0.0; b.len()]))
                .collect(),
            hidden: net.layers.iter().map(|l| Matrix::zeros(l.fan_in(), batch)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Batch-mean training objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `(1/B) Σ_b ‖f_b − y_b‖²`.
    Mse,
    /// Binary cross-entropy on a sigmoid readout.
    Bce,
    /// Softmax cross-entropy on identity logits.
    SoftmaxCe,
}

/// Which scalar a per-output backward pass differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputTarget {
    /// The post-activation output `f = σ(z)`.
    Output,
    /// The readout pre-activation `z`.
    Logit,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].fan_in() != pair[0].fan_out() {
                return Err(Error::ShapeMismatch {
                    op: "network chain",
                    left: pair[0].weight.shape(),
                    right: pair[1].weight.shape(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Fresh network with Gaussian weights and zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        if spec.dims.len() < 2 || spec.dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network dims must have ≥ 2 positive entries, got {:?}",
                spec.dims
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let depth = spec.dims.len() - 1;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fan_in, fan_out) = (spec.dims[l], spec.dims[l + 1]);
            let var = match spec.init {
                InitScheme::He => 2.0 / fan_in as f64,
                InitScheme::Ntk => 1.0 / fan_in as f64,
            };
            let std = var.sqrt();
            let weight = Matrix::from_fn(fan_out, fan_in, |_, _| std * rng.normal());
            let activation = if l + 1 == depth { spec.readout } else { spec.hidden };
            let bias = spec.bias.then(|| vec![0.0; fan_out]);
            layers.push(Layer::new(weight, bias, activation)?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l]
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn readout(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    /// Bias-free with only relu/identity activations, hence 1-positively
    /// homogeneous in every hidden state.
    pub fn is_homogeneous(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.bias.is_none() && matches!(l.activation, Activation::Relu | Activation::Identity))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite())))
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        self.forward_from(0, x)
    }

    /// Runs layers `start..` on `h_start`. The trace's `hidden[0]` is `h_start`.
    pub fn forward_from(&self, start: usize, h: &Matrix) -> Result<ForwardTrace> {
        if start >= self.layers.len() {
            return Err(Error::InvalidArgument(format!("layer {start} out of range")));
        }
        if h.rows() != self.layers[start].fan_in() || h.cols() == 0 {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: self.layers[start].weight.shape(),
                right: h.shape(),
            });
        }
        let mut hidden = Vec::with_capacity(self.layers.len() - start + 1);
        let mut pre = Vec::with_capacity(self.layers.len() - start);
        hidden.push(h.clone());
        for layer in &self.layers[start..] {
            let mut z = layer.weight.matmul(hidden.last().expect("nonempty"))?;
            if let Some(b) = &layer.bias {
                for (r, &bv) in b.iter().enumerate() {
                    z.row_mut(r).iter_mut().for_each(|v| *v += bv);
                }
            }
            let act = layer.activation;
            hidden.push(z.map(|v| act.apply(v)));
            pre.push(z);
        }
        Ok(ForwardTrace { hidden, pre })
    }

    /// Output only, without keeping the trace.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = layer.weight.matmul(&h)?;
            if let Some(b) = &layer.bias {
                for (r, &bv) in b.iter().enumerate() {
                    z.row_mut(r).iter_mut().for_each(|v| *v += bv);
                }
            }
            let act = layer.activation;
            z.map_inplace(|v| act.apply(v));
            h = z;
        }
        Ok(h)
    }

    /// Loss value and gradients for targets `y` laid out like the output (C×B).
    pub fn backward(&self, trace: &ForwardTrace, loss: Loss, y: &Matrix) -> Result<(f64, GradientBundle)> {
        let (value, dz) = self.loss_and_logit_grad(trace, loss, y)?;
        let grads = self.backprop(trace, dz)?;
        Ok((value, grads))
    }

    /// Loss and its gradient with respect to the readout pre-activation.
    pub fn loss_and_logit_grad(&self, trace: &ForwardTrace, loss: Loss, y: &Matrix) -> Result<(f64, Matrix)> {
        let f = trace.output();
        let z = trace.logits();
        if y.shape() != f.shape() {
            return Err(Error::ShapeMismatch {
                op: "loss targets",
                left: f.shape(),
                right: y.shape(),
            });
        }
        let batch = f.cols() as f64;
        let readout = self.readout();
        match loss {
            Loss::Mse => {
                let diff = f.sub(y)?;
                let value = diff.frobenius_sq() / batch;
                let mut dz = diff.scale(2.0 / batch);
                for (g, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *g *= readout.derivative(zv);
                }
                Ok((value, dz))
            }
            Loss::Bce => {
                if readout != Activation::Sigmoid {
                    return Err(Error::InvalidArgument("bce needs a sigmoid readout".into()));
                }
                let mut value = 0.0;
                let mut dz = Matrix::zeros(z.rows(), z.cols());
                for ((g, &zv), &yv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()).zip(y.as_slice()) {
                    // −[y log σ(z) + (1−y) log(1−σ(z))] = softplus(z) − y z
                    value += softplus(zv) - yv * zv;
                    *g = (sigmoid(zv) - yv) / batch;
                }
                Ok((value / batch, dz))
            }
            Loss::SoftmaxCe => {
                if readout != Activation::Identity {
                    return Err(Error::InvalidArgument("softmax_ce needs an identity readout".into()));
                }
                let (c, b) = z.shape();
                let mut value = 0.0;
                let mut dz = Matrix::zeros(c, b);
                for col in 0..b {
                    let zmax = (0..c).map(|r| z[(r, col)]).fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = (0..c).map(|r| (z[(r, col)] - zmax).exp()).sum();
                    let log_denom = denom.ln() + zmax;
                    for r in 0..c {
                        let logp = z[(r, col)] - log_denom;
                        value -= y[(r, col)] * logp;
                        dz[(r, col)] = (logp.exp() - y[(r, col)]) / batch;
                    }
                }
                Ok((value / batch, dz))
            }
        }
    }

    /// Reverse pass from a readout pre-activation gradient.
    pub fn backprop(&self, trace: &ForwardTrace, dz_last: Matrix) -> Result<GradientBundle> {
        let depth = trace.pre.len();
        let offset = self.layers.len() - depth;
        if dz_last.shape() != trace.logits().shape() {
            return Err(Error::ShapeMismatch {
                op: "backprop",
                left: trace.logits().shape(),
                right: dz_last.shape(),
            });
        }
        let mut weights = vec![Matrix::zeros(0, 0); depth];
        let mut biases = vec![None; depth];
        let mut hidden = vec![Matrix::zeros(0, 0); depth];
        let mut dz = dz_last;
        for i in (0..depth).rev() {
            let layer = &self.layers[offset + i];
            weights[i] = dz.matmul_t(&trace.hidden[i])?;
            biases[i] = layer.bias.as_ref().map(|_| dz.row_sums());
            let dh = layer.weight.t_matmul(&dz)?;
            if i > 0 {
                let act = self.layers[offset + i - 1].activation;
                let mut next = dh.clone();
                for (g, &zv) in next.as_mut_slice().iter_mut().zip(trace.pre[i - 1].as_slice()) {
                    *g *= act.derivative(zv);
                }
                dz = next;
            }
            hidden[i] = dh;
        }
        Ok(GradientBundle {
            weights,
            biases,
            hidden,
        })
    }

    /// Gradients of output unit `index`, summed over the batch. `hidden[l]`
    /// column b holds `∇_{h_l} f_index(x_b)`, the per-sample Jacobian row.
    pub fn output_gradients(&self, trace: &ForwardTrace, index: usize, target: OutputTarget) -> Result<GradientBundle> {
        let z = trace.logits();
        if index >= z.rows() {
            return Err(Error::InvalidArgument(format!("output index {index} ≥ {}", z.rows())));
        }
        let act = self.readout();
        let mut dz = Matrix::zeros(z.rows(), z.cols());
        for b in 0..z.cols() {
            dz[(index, b)] = match target {
                OutputTarget::Output => act.derivative(z[(index, b)]),
                OutputTarget::Logit => 1.0,
            };
        }
        self.backprop(trace, dz)
    }

    /// All parameters flattened layer by layer, weights before bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch {
                op: "set_parameters",
                left: (self.parameter_count(), 1),
                right: (params.len(), 1),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&params[at..at + n]);
            at += n;
            if let Some(b) = &mut l.bias {
                let n = b.len();
                b.copy_from_slice(&params[at..at + n]);
                at += n;
            }
        }
        Ok(())
    }
}

impl GradientBundle {
    /// Flattened in the same order as [`Network::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            if let Some(b) = b {
                out.extend_from_slice(b);
            }
        }
        out
    }
}

/// Fraction of columns whose argmax matches the target's argmax.
pub fn accuracy(output: &Matrix, targets: &Matrix) -> f64 {
    if output.cols() == 0 {
        return 0.0;
    }
    let hits = if output.rows() == 1 {
        // Binary: threshold the single output at 0.5 against 0/1 targets.
        output
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .filter(|(f, y)| (**f >= 0.5) == (**y >= 0.5))
            .count()
    } else {
        output
            .argmax_cols()
            .iter()
            .zip(targets.argmax_cols())
            .filter(|(a, b)| **a == *b)
            .count()
    };
    hits as f64 / output.cols() as f64
}
