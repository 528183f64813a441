//! Training-dynamics predictions that rely on positive homogeneity.

use serde::{Deserialize, Serialize};

use crate::diagnostics::linearity::{ridge_fit, INEQUALITY_SLACK};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::nn::{Activation, Loss, Network, OutputTarget};

/// Relative tolerance of the Euler identity `hᵀ∇_h f = f`.
pub const EULER_TOL: f64 = 1e-6;

/// Layers `from..` are bias-free with relu/identity hidden activations. The
/// readout may be a sigmoid since its logit stays homogeneous.
fn homogeneous_from(net: &Network, from: usize) -> bool {
    let last = net.depth() - 1;
    net.layers()[from..].iter().enumerate().all(|(i, l)| {
        let act_ok = matches!(l.activation, Activation::Relu | Activation::Identity)
            || (from + i == last && l.activation == Activation::Sigmoid);
        l.bias.is_none() && act_ok
    })
}

/// Worst relative deviation of `h_lᵀ ∇_{h_l} z = z` over the batch, where `z`
/// is the scalar logit.
pub fn euler_residual(net: &Network, x: &Matrix, l: usize) -> Result<f64> {
    if net.output_dim() != 1 {
        return Err(Error::InvalidArgument("euler check needs a scalar output".into()));
    }
    let trace = net.forward(x)?;
    let g = net.output_gradients(&trace, 0, OutputTarget::Logit)?;
    let h = &trace.hidden[l];
    let z = trace.logits();
    let mut worst: f64 = 0.0;
    for b in 0..h.cols() {
        let lhs: f64 = (0..h.rows()).map(|i| h[(i, b)] * g.hidden[l][(i, b)]).sum();
        let scale = z[(0, b)].abs().max(1e-12);
        worst = worst.max((lhs - z[(0, b)]).abs() / scale);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStep {
    /// `𝒮(G⁺_id) − 𝒮(G_id)` measured around an actual GD step on `W_l`.
    pub actual: f64,
    /// `2γ (fᵀy)(yᵀKg)`.
    pub predicted: f64,
    pub f_dot_y: f64,
    pub ykg: f64,
}

impl SurrogateStep {
    pub fn relative_gap(&self) -> f64 {
        (self.actual - self.predicted).abs() / self.actual.abs().max(f64::MIN_POSITIVE)
    }
}

/// First-order prediction of the surrogate change when layer `l` takes one GD
/// step. `y` is the 1×N target row; for BCE `f` is the logit.
pub fn thm3_prediction(
    net: &Network,
    x: &Matrix,
    y: &Matrix,
    loss: Loss,
    l: usize,
    gamma: f64,
) -> Result<SurrogateStep> {
    if l >= net.depth() {
        return Err(Error::InvalidArgument(format!("layer {l} out of range")));
    }
    if net.output_dim() != 1 {
        return Err(Error::InvalidArgument("surrogate dynamics need a scalar output".into()));
    }
    if !homogeneous_from(net, l) {
        return Err(Error::NotHomogeneous(format!(
            "layers from {l} carry a bias or non-relu activation"
        )));
    }
    let euler = euler_residual(net, x, l)?;
    if euler > EULER_TOL {
        return Err(Error::NotHomogeneous(format!("Euler identity off by {euler:e}")));
    }
    let trace = net.forward(x)?;
    let (_, dz) = net.loss_and_logit_grad(&trace, loss, y)?;
    let grads = net.backprop(&trace, dz.clone())?;

    let h = &trace.hidden[l];
    let yv = y.transpose();
    let hy = h.matmul(&yv)?;
    let w = &net.layer(l).weight;
    let mut w_plus = w.clone();
    w_plus.axpy(-gamma, &grads.weights[l])?;
    let before = w.matmul(&hy)?.frobenius_sq();
    let after = w_plus.matmul(&hy)?.frobenius_sq();

    let f = trace.logits();
    let f_dot_y = dot(f.as_slice(), y.as_slice());
    let g = dz.scale(-1.0).transpose();
    let hg = h.matmul(&g)?;
    let ykg = hy.inner(&hg)?;
    Ok(SurrogateStep {
        actual: after - before,
        predicted: 2.0 * gamma * f_dot_y * ykg,
        f_dot_y,
        ykg,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingTargetDecomp {
    /// `‖y − y_OLS‖`.
    pub target_gap: f64,
    /// `‖ŷ − y_OLS‖`.
    pub chase_gap: f64,
    /// `‖y − ŷ‖`.
    pub loss_gap: f64,
}

impl MovingTargetDecomp {
    pub fn triangle_holds(&self) -> bool {
        self.loss_gap <= (self.target_gap + self.chase_gap) * (1.0 + INEQUALITY_SLACK)
    }
}

/// Splits the fit error into distance to the best linear predictor on `H`
/// (`y_OLS = Hᵀ(HHᵀ + εI)⁻¹Hy`) and the network's distance to that predictor.
pub fn moving_target_decomp(h: &Matrix, y: &[f64], yhat: &[f64], eps: f64) -> Result<MovingTargetDecomp> {
    if y.len() != h.cols() || yhat.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "moving_target_decomp",
            left: h.shape(),
            right: (y.len(), yhat.len()),
        });
    }
    let y_ols = ridge_fit(h, &Matrix::column_vector(y), eps)?;
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    Ok(MovingTargetDecomp {
        target_gap: dist(y, y_ols.as_slice()),
        chase_gap: dist(yhat, y_ols.as_slice()),
        loss_gap: dist(y, yhat),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `σ(W⁺h) − σ(Wh)` per coordinate of `h_l`.
    pub actual: Vec<f64>,
    /// `−γ∇h_l` per coordinate.
    pub virtual_step: Vec<f64>,
    pub lipschitz: f64,
    pub magnitude_ok: Vec<bool>,
    /// Empty when the activation is not monotone.
    pub sign_ok: Vec<bool>,
}

impl AlignmentReport {
    pub fn all_pass(&self) -> bool {
        self.magnitude_ok.iter().all(|&b| b) && self.sign_ok.iter().all(|&b| b)
    }
}

/// Absolute slack on the magnitude bound, covering rounding in `W⁺h − Wh`.
pub const ALIGNMENT_ABS_SLACK: f64 = 1e-13;

/// Scales a single sample so that `‖h_{l−1}‖ = 1`. Needs the layers before
/// `l − 1` to be positively homogeneous.
pub fn normalize_for_layer(net: &Network, x: &Matrix, l: usize) -> Result<Matrix> {
    if l == 0 || l >= net.depth() {
        return Err(Error::InvalidArgument(format!("layer {l} has no preceding weight")));
    }
    if x.cols() != 1 {
        return Err(Error::InvalidArgument("alignment works on one sample".into()));
    }
    let prefix_ok = net.layers()[..l - 1]
        .iter()
        .all(|lay| lay.bias.is_none() && matches!(lay.activation, Activation::Relu | Activation::Identity));
    if !prefix_ok {
        return Err(Error::NotHomogeneous(
            "layers before the probed one must be bias-free relu".into(),
        ));
    }
    let norm = if l == 1 {
        x.frobenius_norm()
    } else {
        net.forward(x)?.hidden[l - 1].frobenius_norm()
    };
    if norm == 0.0 {
        return Err(Error::DegenerateInput("sample maps to a zero hidden state"));
    }
    Ok(x.scale(1.0 / norm))
}

/// Compares the actual change of `h_l` after a GD step on `W_{l−1}` alone with
/// the virtual step `−γ∇h_l`. The bias of layer `l − 1` is held fixed.
pub fn prop1_alignment(
    net: &Network,
    x: &Matrix,
    y: &Matrix,
    loss: Loss,
    l: usize,
    gamma: f64,
) -> Result<AlignmentReport> {
    if l == 0 || l >= net.depth() {
        return Err(Error::InvalidArgument(format!("layer {l} must be a hidden layer")));
    }
    if x.cols() != 1 {
        return Err(Error::InvalidArgument("alignment works on one sample".into()));
    }
    let trace = net.forward(x)?;
    let h_prev = &trace.hidden[l - 1];
    let norm = h_prev.frobenius_norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::AssumptionViolated(format!("‖h_(l−1)‖ = {norm}, expected 1")));
    }
    let (_, grads) = net.backward(&trace, loss, y)?;
    let layer = net.layer(l - 1);
    let act = layer.activation;
    let mut w_plus = layer.weight.clone();
    w_plus.axpy(-gamma, &grads.weights[l - 1])?;
    let mut z_plus = w_plus.matmul(h_prev)?;
    if let Some(b) = &layer.bias {
        for (r, bv) in b.iter().enumerate() {
            z_plus[(r, 0)] += bv;
        }
    }
    let h_now = &trace.hidden[l];
    let lip = act.lipschitz();
    let d = h_now.rows();
    let mut actual = Vec::with_capacity(d);
    let mut virtual_step = Vec::with_capacity(d);
    let mut magnitude_ok = Vec::with_capacity(d);
    let mut sign_ok = Vec::new();
    for i in 0..d {
        let a = act.apply(z_plus[(i, 0)]) - h_now[(i, 0)];
        let v = -gamma * grads.hidden[l][(i, 0)];
        magnitude_ok.push(a.abs() <= lip * lip * v.abs() * (1.0 + INEQUALITY_SLACK) + ALIGNMENT_ABS_SLACK);
        if act.is_monotone() {
            // sgn(0) is compatible with either sign.
            sign_ok.push(a == 0.0 || v == 0.0 || (a > 0.0) == (v > 0.0));
        }
        actual.push(a);
        virtual_step.push(v);
    }
    Ok(AlignmentReport {
        actual,
        virtual_step,
        lipschitz: lip,
        magnitude_ok,
        sign_ok,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorSum {
    /// `Σ_ij [f(x_i) − f(x_j) − (x_i − x_j)ᵀ∇f(x_j)]`, by brute force.
    pub pairwise: f64,
    /// `m N Σ_j f(x_j)` with `m = 1`.
    pub closed_form: f64,
}

impl TaylorSum {
    pub fn relative_gap(&self) -> f64 {
        (self.pairwise - self.closed_form).abs()
            / self.pairwise.abs().max(self.closed_form.abs()).max(f64::MIN_POSITIVE)
    }
}

/// Sum of all pairwise first-order Taylor errors of a scalar bias-free relu
/// network over a centered batch.
pub fn pairwise_taylor_sum(net: &Network, x: &Matrix) -> Result<TaylorSum> {
    if net.output_dim() != 1 {
        return Err(Error::InvalidArgument("taylor sum needs a scalar output".into()));
    }
    if !net.is_homogeneous() {
        return Err(Error::NotHomogeneous("network must be bias-free relu/identity".into()));
    }
    let means = x.row_means();
    let scale = x.max_abs().max(1.0);
    if means.iter().any(|m| m.abs() > 1e-12 * scale) {
        return Err(Error::AssumptionViolated("batch is not centered".into()));
    }
    let trace = net.forward(x)?;
    let f = trace.output().as_slice().to_vec();
    let g = net
        .output_gradients(&trace, 0, OutputTarget::Output)?
        .hidden
        .swap_remove(0);
    let (d, n) = x.shape();
    let xt = x.transpose();
    let gt = g.transpose();
    let mut pairwise = 0.0;
    for i in 0..n {
        let xi = xt.row(i);
        for j in 0..n {
            let xj = xt.row(j);
            let gj = gt.row(j);
            let mut lin = 0.0;
            for k in 0..d {
                lin += (xi[k] - xj[k]) * gj[k];
            }
            pairwise += f[i] - f[j] - lin;
        }
    }
    Ok(TaylorSum {
        pairwise,
        closed_form: n as f64 * f.iter().sum::<f64>(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCrossing {
    /// Number of hidden units whose sign flips on the open segment `(a, b)`.
    pub crossings: usize,
    /// `max |v_i|·‖w_i‖` over the crossed units.
    pub delta: f64,
    /// `f(b) − bᵀ∇f(a)`.
    pub epsilon: f64,
    pub radius: f64,
    /// `2 M B δ`.
    pub bound: f64,
}

impl RegionCrossing {
    pub fn holds(&self) -> bool {
        if self.crossings == 0 {
            self.epsilon.abs() <= 1e-10
        } else {
            self.epsilon.abs() <= self.bound * (1.0 + INEQUALITY_SLACK)
        }
    }
}

/// Linearization error of a depth-2 bias-free relu network between two points,
/// against the count of linear regions crossed.
pub fn region_crossings_depth2(net: &Network, a: &[f64], b: &[f64]) -> Result<RegionCrossing> {
    let shape_ok = net.depth() == 2
        && net.is_homogeneous()
        && net.layer(0).activation == Activation::Relu
        && net.layer(1).activation == Activation::Identity
        && net.output_dim() == 1;
    if !shape_ok {
        return Err(Error::NotHomogeneous(
            "expected a bias-free relu hidden layer with a scalar linear readout".into(),
        ));
    }
    let w = &net.layer(0).weight;
    let v = net.layer(1).weight.row(0);
    if a.len() != w.cols() || b.len() != w.cols() {
        return Err(Error::ShapeMismatch {
            op: "region_crossings_depth2",
            left: w.shape(),
            right: (a.len(), b.len()),
        });
    }
    let za = w.matvec(a)?;
    let zb = w.matvec(b)?;
    let mut crossings = 0;
    let mut delta: f64 = 0.0;
    let mut f_b = 0.0;
    let mut lin = 0.0;
    for i in 0..w.rows() {
        let slope = zb[i] - za[i];
        if slope != 0.0 {
            let t = -za[i] / slope;
            if t > 0.0 && t < 1.0 {
                crossings += 1;
                let wn = dot(w.row(i), w.row(i)).sqrt();
                delta = delta.max(v[i].abs() * wn);
            }
        }
        f_b += v[i] * zb[i].max(0.0);
        if za[i] > 0.0 {
            lin += v[i] * zb[i];
        }
    }
    let radius = dot(a, a).sqrt().max(dot(b, b).sqrt());
    Ok(RegionCrossing {
        crossings,
        delta,
        epsilon: f_b - lin,
        radius,
        bound: 2.0 * crossings as f64 * radius * delta,
    })
}
