//! Weight-Gram identities: the feature learning equation, the virtual
//! covariance shift and the average gradient outer product.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{ForwardTrace, GradientBundle, Loss, Network, OutputTarget};
use serde::{Deserialize, Serialize};

fn check_layer(net: &Network, l: usize) -> Result<()> {
    if l >= net.depth() {
        return Err(Error::InvalidArgument(format!(
            "layer {l} out of range for depth {}",
            net.depth()
        )));
    }
    Ok(())
}

/// `‖W_lᵀ∇W_l − Σ_b ∇h_l hᵀ_l‖_F / ‖W_lᵀ∇W_l‖_F`.
pub fn fle_residual(net: &Network, trace: &ForwardTrace, grads: &GradientBundle, l: usize) -> Result<f64> {
    check_layer(net, l)?;
    let lhs = net.layer(l).weight.t_matmul(&grads.weights[l])?;
    let rhs = grads.hidden[l].matmul_t(&trace.hidden[l])?;
    Ok(lhs.sub(&rhs)?.frobenius_norm() / lhs.frobenius_norm().max(1e-300))
}

/// `(W⁺)ᵀW⁺ − WᵀW`.
pub fn gram_shift(w: &Matrix, w_plus: &Matrix) -> Result<Matrix> {
    w_plus.t_matmul(w_plus)?.sub(&w.t_matmul(w)?)
}

/// `Σ_b [h⁺h⁺ᵀ − hhᵀ]` with `h⁺ = h − γ∇h`, in expanded form.
pub fn vcs(h: &Matrix, grad_h: &Matrix, gamma: f64) -> Result<Matrix> {
    let mut out = vcs_first_order(h, grad_h, gamma)?;
    out.axpy(gamma * gamma, &grad_h.matmul_t(grad_h)?)?;
    Ok(out)
}

/// The O(γ) part `−γ Σ_b (∇h hᵀ + h ∇hᵀ)`.
pub fn vcs_first_order(h: &Matrix, grad_h: &Matrix, gamma: f64) -> Result<Matrix> {
    if h.shape() != grad_h.shape() {
        return Err(Error::ShapeMismatch {
            op: "vcs",
            left: h.shape(),
            right: grad_h.shape(),
        });
    }
    let cross = grad_h.matmul_t(h)?;
    let sym = cross.add(&cross.transpose())?;
    Ok(sym.scale(-gamma))
}

/// Frobenius residual between the actual GD Gram shift of layer `l` and the
/// first-order VCS of its input, at step `γ` and `γ/2`.
pub fn thm1_residual_scaling(
    net: &Network,
    x: &Matrix,
    y: &Matrix,
    loss: Loss,
    l: usize,
    gamma: f64,
) -> Result<(f64, f64)> {
    check_layer(net, l)?;
    let trace = net.forward(x)?;
    let (_, grads) = net.backward(&trace, loss, y)?;
    let residual = |g: f64| -> Result<f64> {
        let w = &net.layer(l).weight;
        let mut w_plus = w.clone();
        w_plus.axpy(-g, &grads.weights[l])?;
        let shift = gram_shift(w, &w_plus)?;
        let first = vcs_first_order(&trace.hidden[l], &grads.hidden[l], g)?;
        Ok(shift.sub(&first)?.frobenius_norm())
    };
    Ok((residual(gamma)?, residual(gamma / 2.0)?))
}

/// `(1/N) Σ_c Σ_b ∇_{h_l} f_c ∇_{h_l} f_cᵀ`, summed over output units.
pub fn agop(net: &Network, trace: &ForwardTrace, l: usize, target: OutputTarget) -> Result<Matrix> {
    check_layer(net, l)?;
    let n = trace.batch() as f64;
    let d = net.layer(l).fan_in();
    let mut out = Matrix::zeros(d, d);
    for c in 0..net.output_dim() {
        let g = net.output_gradients(trace, c, target)?;
        out.axpy(1.0 / n, &g.hidden[l].matmul_t(&g.hidden[l])?)?;
    }
    Ok(out)
}

/// Where the input gradient of each virtual step is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VirtualGradient {
    /// At the fixed original input `x0`: the trajectory accumulates the input
    /// gradients the GD steps themselves produced.
    #[default]
    Input,
    /// At the current virtual point `x̃_t`.
    Trajectory,
}

/// Virtually updated inputs `x̃_{t+1} = x̃_t − γ∇_x ℓ_t`, ℓ being the per-sample
/// loss under checkpoint `t`. The returned sequence starts with `x0` and has
/// one more entry than `checkpoints`.
pub fn virtual_trajectory(
    checkpoints: &[Network],
    x0: &Matrix,
    y: &Matrix,
    loss: Loss,
    gamma: f64,
    at: VirtualGradient,
) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(checkpoints.len() + 1);
    out.push(x0.clone());
    let n = x0.cols() as f64;
    for net in checkpoints {
        let current = out.last().expect("nonempty");
        let point = match at {
            VirtualGradient::Input => x0,
            VirtualGradient::Trajectory => current,
        };
        let trace = net.forward(point)?;
        let (_, grads) = net.backward(&trace, loss, y)?;
        let mut next = current.clone();
        // Batch-mean loss: scale back to per-sample gradients.
        next.axpy(-gamma * n, &grads.hidden[0])?;
        if !next.is_finite() {
            return Err(Error::NonFinite("virtual trajectory"));
        }
        out.push(next);
    }
    Ok(out)
}
