//! Measurements over a network, its forward trace and gradients.
//!
//! Layer indices follow the representation `h_l`: layer `l` diagnostics use
//! the features entering weight `W_l` and the Gram `G_id = HᵀW_lᵀW_lH`.

mod collapse;
pub mod dump;
mod dynamics;
mod gram;
mod linearity;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::Matrix;
use crate::nn::{ForwardTrace, GradientBundle, Network};

pub use collapse::{
    construct_etf, nc_probe, ols_interpolation_gap, EtfFeatures, InterpolationGap, NcReport, MAX_EXPLICIT_GRAM_N,
};
pub use dynamics::{
    euler_residual, moving_target_decomp, normalize_for_layer, pairwise_taylor_sum, prop1_alignment,
    region_crossings_depth2, thm3_prediction, AlignmentReport, MovingTargetDecomp, RegionCrossing, SurrogateStep,
    TaylorSum, ALIGNMENT_ABS_SLACK, EULER_TOL,
};
pub use gram::{
    agop, fle_residual, gram_shift, thm1_residual_scaling, vcs, vcs_first_order, virtual_trajectory, VirtualGradient,
};
pub use linearity::{
    kantorovich_check, ridge_fit, surrogate, surrogate_features, surrogate_gid, target_linearity,
    target_linearity_report, thm2_bound_check, woodbury_error_check, KantorovichCheck, SurrogateBound, TargetLinearity,
    WoodburyCheck, INEQUALITY_SLACK, MAX_KANTOROVICH_DIM, MAX_WOODBURY_N, ZERO_RIDGE_JITTER,
};

/// Per-layer summary logged during training. Matrices are reduced to norms
/// so records stay small.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    /// Pooled TL of `h_l` against the targets.
    pub tl: f64,
    /// `𝒮(G_id) = ‖W_l H_l Y‖²_F`.
    pub surrogate: f64,
    /// `‖(W⁺)ᵀW⁺ − WᵀW‖_F` for the GD step `W⁺ = W − γ∇W`.
    pub gram_shift_norm: f64,
    /// `‖VCS‖_F` with the full second-order expansion.
    pub vcs_norm: f64,
    /// `‖gram shift − first-order VCS‖_F`.
    pub vcs_residual: f64,
    pub fle_residual: f64,
}

/// Diagnostics of layer `l` for targets `y` (N×C) at step size `gamma`.
pub fn layer_diagnostics(
    net: &Network,
    trace: &ForwardTrace,
    grads: &GradientBundle,
    y: &Matrix,
    l: usize,
    lambda: f64,
    gamma: f64,
) -> Result<LayerDiagnostics> {
    let h = &trace.hidden[l];
    let w = &net.layer(l).weight;
    let mut w_plus = w.clone();
    w_plus.axpy(-gamma, &grads.weights[l])?;
    let shift = gram_shift(w, &w_plus)?;
    let first = vcs_first_order(h, &grads.hidden[l], gamma)?;
    Ok(LayerDiagnostics {
        layer: l,
        tl: target_linearity(h, y, lambda)?,
        surrogate: surrogate_gid(w, h, y)?,
        gram_shift_norm: shift.frobenius_norm(),
        vcs_norm: vcs(h, &grads.hidden[l], gamma)?.frobenius_norm(),
        vcs_residual: shift.sub(&first)?.frobenius_norm(),
        fle_residual: fle_residual(net, trace, grads, l)?,
    })
}
