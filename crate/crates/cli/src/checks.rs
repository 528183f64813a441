//! Randomized sweeps over the diagnostics contracts. Each sweep returns raw
//! measurements; callers decide tolerances.

use featlab::diagnostics::{
    construct_etf, fle_residual, kantorovich_check, nc_probe, normalize_for_layer, ols_interpolation_gap,
    pairwise_taylor_sum, prop1_alignment, region_crossings_depth2, thm1_residual_scaling, thm2_bound_check,
    thm3_prediction, woodbury_error_check, InterpolationGap, KantorovichCheck, RegionCrossing, SurrogateBound,
};
use featlab::linalg::operator_norm;
use featlab::nn::{Activation, InitScheme, Loss, Network, NetworkSpec};
use featlab::{Matrix, SplitMix64};
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

pub fn gaussian(r: usize, c: usize, rng: &mut SplitMix64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.normal())
}

fn centered_cols(x: Matrix) -> Matrix {
    let m = x.row_means();
    Matrix::from_fn(x.rows(), x.cols(), |r, c| x[(r, c)] - m[r])
}

fn size(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

pub fn mlp(dims: &[usize], hidden: Activation, readout: Activation, bias: bool, seed: u64) -> CliResult<Network> {
    Ok(Network::init(
        &NetworkSpec {
            dims: dims.to_vec(),
            hidden,
            readout,
            bias,
            init: InitScheme::He,
        },
        seed,
    )?)
}

fn targets(loss: Loss, c: usize, n: usize, rng: &mut SplitMix64) -> Matrix {
    match loss {
        Loss::Mse => gaussian(c, n, rng),
        Loss::Bce => Matrix::from_fn(c, n, |_, _| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }),
        Loss::SoftmaxCe => {
            let mut y = Matrix::zeros(c, n);
            for b in 0..n {
                y[(rng.below(c), b)] = 1.0;
            }
            y
        }
    }
}

/// Worst FLE residual over all layers of each random (net, batch, loss).
pub fn fle_sweep(trials: usize, seed: u64) -> CliResult<Vec<f64>> {
    let mut rng = SplitMix64::derive(seed, 1);
    let acts = [
        Activation::Relu,
        Activation::Gelu,
        Activation::Identity,
        Activation::Sigmoid,
    ];
    let losses = [Loss::Mse, Loss::Bce, Loss::SoftmaxCe];
    (0..trials)
        .map(|t| {
            let loss = losses[t % 3];
            let depth = size(&mut rng, 1, 4);
            let mut dims: Vec<usize> = (0..depth).map(|_| size(&mut rng, 2, 24)).collect();
            dims.push(if loss == Loss::Bce {
                size(&mut rng, 1, 3)
            } else {
                size(&mut rng, 2, 6)
            });
            let readout = if loss == Loss::Bce {
                Activation::Sigmoid
            } else {
                Activation::Identity
            };
            let net = mlp(&dims, acts[rng.below(4)], readout, rng.bernoulli(0.5), rng.next_u64())?;
            let n = size(&mut rng, 1, 32);
            let x = gaussian(dims[0], n, &mut rng);
            let y = targets(loss, *dims.last().unwrap(), n, &mut rng);
            let trace = net.forward(&x)?;
            let (_, grads) = net.backward(&trace, loss, &y)?;
            let mut worst: f64 = 0.0;
            for l in 0..net.depth() {
                worst = worst.max(fle_residual(&net, &trace, &grads, l)?);
            }
            Ok(worst)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResidualRatio {
    pub gamma: f64,
    pub ratio: f64,
}

/// `residual(γ)/residual(γ/2)` of the Gram shift against first-order VCS on
/// random relu nets, every layer.
pub fn thm1_sweep(nets: usize, gammas: &[f64], seed: u64) -> CliResult<Vec<ResidualRatio>> {
    let mut rng = SplitMix64::derive(seed, 2);
    let mut out = Vec::new();
    for _ in 0..nets {
        let dims = [
            size(&mut rng, 3, 12),
            size(&mut rng, 4, 16),
            size(&mut rng, 4, 16),
            size(&mut rng, 1, 4),
        ];
        let net = mlp(&dims, Activation::Relu, Activation::Identity, true, rng.next_u64())?;
        let n = size(&mut rng, 4, 24);
        let x = gaussian(dims[0], n, &mut rng);
        let y = gaussian(dims[3], n, &mut rng);
        for &gamma in gammas {
            for l in 0..net.depth() {
                let (full, half) = thm1_residual_scaling(&net, &x, &y, Loss::Mse, l, gamma)?;
                out.push(ResidualRatio {
                    gamma,
                    ratio: full / half,
                });
            }
        }
    }
    Ok(out)
}

/// Relative primal/dual ridge-error gaps on random instances with `N ≤ 256`.
pub fn woodbury_sweep(trials: usize, seed: u64) -> CliResult<Vec<f64>> {
    let mut rng = SplitMix64::derive(seed, 3);
    (0..trials)
        .map(|_| {
            let d = size(&mut rng, 2, 40);
            let n = size(&mut rng, 2, 256);
            let c = size(&mut rng, 1, 4);
            let h = gaussian(d, n, &mut rng);
            let y = gaussian(n, c, &mut rng);
            let lambda = 10f64.powf(rng.uniform(-3.0, 1.0));
            Ok(woodbury_error_check(&h, &y, lambda)?.relative_gap)
        })
        .collect()
}

/// TL lower bound through the next layer, with `c₀`, `c₁` set to the actual
/// norms so every instance meets the preconditions.
pub fn thm2_sweep(trials: usize, seed: u64) -> CliResult<Vec<SurrogateBound>> {
    let mut rng = SplitMix64::derive(seed, 4);
    (0..trials)
        .map(|_| {
            let d = size(&mut rng, 2, 10);
            let n = size(&mut rng, d + 1, 60);
            let h = gaussian(d, n, &mut rng);
            let mut y = gaussian(n, 1, &mut rng);
            if rng.bernoulli(0.5) {
                // Partly linear target so the bound is not vacuous.
                let beta = gaussian(d, 1, &mut rng);
                y = h.t_matmul(&beta)?.add(&y.scale(0.3))?;
            }
            let w = gaussian(size(&mut rng, 1, 8), d, &mut rng);
            let lambda = 10f64.powf(rng.uniform(-2.0, 1.0));
            Ok(thm2_bound_check(
                &h,
                &y,
                &w,
                lambda,
                operator_norm(&w),
                h.frobenius_norm(),
            )?)
        })
        .collect()
}

/// `|ΔS_actual − ΔS_pred| / |ΔS_actual|` at the first layer of a bias-free
/// one-hidden-layer relu net after one GD step of size `gamma`.
pub fn thm3_sweep(seeds: usize, loss: Loss, gamma: f64, seed: u64) -> CliResult<Vec<f64>> {
    let readout = if loss == Loss::Bce {
        Activation::Sigmoid
    } else {
        Activation::Identity
    };
    (0..seeds)
        .map(|s| {
            let mut rng = SplitMix64::derive(seed ^ s as u64, 5);
            let net = mlp(&[5, 16, 1], Activation::Relu, readout, false, rng.next_u64())?;
            let x = gaussian(5, 20, &mut rng);
            let y = targets(loss, 1, 20, &mut rng);
            Ok(thm3_prediction(&net, &x, &y, loss, 0, gamma)?.relative_gap())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EtfRow {
    pub classes: usize,
    pub dim: usize,
    pub relative_distance: f64,
    pub maximality_gap: f64,
    pub relative_gap: f64,
    pub nc1: f64,
    pub nc2: f64,
}

/// NC metrics of constructed simplex-ETF features with `D = C + 3`.
pub fn etf_sweep(classes: &[usize], per_class: usize, seed: u64) -> CliResult<Vec<EtfRow>> {
    classes
        .iter()
        .map(|&c| {
            let dim = c + 3;
            let f = construct_etf(c, dim, per_class, seed ^ c as u64)?;
            let r = nc_probe(&f.h, &f.labels, c, &f.w)?;
            Ok(EtfRow {
                classes: c,
                dim,
                relative_distance: r.relative_distance(),
                maximality_gap: r.maximality_gap,
                relative_gap: r.relative_gap(),
                nc1: r.nc1,
                nc2: r.nc2,
            })
        })
        .collect()
}

/// Interpolation bound on random latents/targets.
pub fn interpolation_sweep(trials: usize, alphas: &[f64], seed: u64) -> CliResult<Vec<InterpolationGap>> {
    let mut rng = SplitMix64::derive(seed, 6);
    (0..trials)
        .map(|_| {
            let k = size(&mut rng, 1, 6);
            let n = size(&mut rng, k + 2, 60);
            let d = size(&mut rng, 1, 12);
            let z = gaussian(n, k, &mut rng);
            let x = gaussian(n, d, &mut rng);
            Ok(ols_interpolation_gap(&z, &x, alphas)?)
        })
        .collect()
}

/// Whether every coordinate passes both alignment tests, per trial.
pub fn prop1_sweep(trials: usize, seed: u64) -> CliResult<Vec<bool>> {
    let mut rng = SplitMix64::derive(seed, 7);
    (0..trials)
        .map(|_| {
            let depth = size(&mut rng, 2, 4);
            let mut dims: Vec<usize> = (0..depth).map(|_| size(&mut rng, 2, 16)).collect();
            dims.push(1);
            let act = if rng.bernoulli(0.8) {
                Activation::Relu
            } else {
                Activation::Identity
            };
            let net = mlp(&dims, act, Activation::Identity, false, rng.next_u64())?;
            let l = size(&mut rng, 1, depth - 1);
            let x = loop {
                let x = gaussian(dims[0], 1, &mut rng);
                if let Ok(x) = normalize_for_layer(&net, &x, l) {
                    break x;
                }
            };
            let y = gaussian(1, 1, &mut rng);
            let gamma = 10f64.powf(rng.uniform(-3.0, -0.5));
            Ok(prop1_alignment(&net, &x, &y, Loss::Mse, l, gamma)?.all_pass())
        })
        .collect()
}

/// Relative gap of the pairwise Taylor-error sum on centered batches.
pub fn taylor_sweep(trials: usize, seed: u64) -> CliResult<Vec<f64>> {
    let mut rng = SplitMix64::derive(seed, 8);
    (0..trials)
        .map(|_| {
            let d = size(&mut rng, 1, 8);
            let depth = size(&mut rng, 1, 3);
            let mut dims = vec![d];
            dims.extend((0..depth).map(|_| size(&mut rng, 2, 16)));
            dims.push(1);
            let net = mlp(&dims, Activation::Relu, Activation::Identity, false, rng.next_u64())?;
            let x = centered_cols(gaussian(d, size(&mut rng, 2, 40), &mut rng));
            Ok(pairwise_taylor_sum(&net, &x)?.relative_gap())
        })
        .collect()
}

pub fn kantorovich_sweep(trials: usize, seed: u64) -> CliResult<Vec<KantorovichCheck>> {
    let mut rng = SplitMix64::derive(seed, 9);
    (0..trials)
        .map(|_| {
            let n = size(&mut rng, 1, 24);
            let a = gaussian(n, size(&mut rng, 1, 2 * n), &mut rng);
            let g = a.matmul_t(&a)?.symmetrized()?;
            let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let lambda = 10f64.powf(rng.uniform(-3.0, 1.0));
            Ok(kantorovich_check(&g, &y, lambda)?)
        })
        .collect()
}

pub fn region_sweep(trials: usize, seed: u64) -> CliResult<Vec<RegionCrossing>> {
    let mut rng = SplitMix64::derive(seed, 10);
    (0..trials)
        .map(|_| {
            let d = size(&mut rng, 1, 6);
            let m = size(&mut rng, 1, 32);
            let net = mlp(
                &[d, m, 1],
                Activation::Relu,
                Activation::Identity,
                false,
                rng.next_u64(),
            )?;
            let a: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            Ok(region_crossings_depth2(&net, &a, &b)?)
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub trials: usize,
    pub violations: usize,
    /// Worst (or, for medians, the median) measured value.
    pub statistic: f64,
    pub tolerance: f64,
    /// Contracts gate the exit status; approximations are only reported.
    pub gating: bool,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn over(check: &str, values: &[f64], tol: f64) -> CheckRow {
    CheckRow {
        check: check.into(),
        trials: values.len(),
        violations: values.iter().filter(|v| !(**v <= tol)).count(),
        statistic: values.iter().copied().fold(0.0, f64::max),
        tolerance: tol,
        gating: true,
    }
}

fn flags(check: &str, ok: &[bool]) -> CheckRow {
    CheckRow {
        check: check.into(),
        trials: ok.len(),
        violations: ok.iter().filter(|b| !**b).count(),
        statistic: ok.iter().filter(|b| !**b).count() as f64,
        tolerance: 0.0,
        gating: true,
    }
}

fn scaled(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).round() as usize).max(1)
}

/// The full contract sweep behind `check` and the `prop_checks` experiment.
pub fn run_all(scale: f64, seed: u64) -> CliResult<Vec<CheckRow>> {
    let s = |n| scaled(n, scale);
    let mut rows = Vec::new();
    rows.push(over("fle_residual", &fle_sweep(s(100), seed)?, 1e-10));

    let ratios = thm1_sweep(s(20), &[1e-2, 1e-3], seed)?;
    let dev: Vec<f64> = ratios.iter().map(|r| (r.ratio - 4.0).abs()).collect();
    rows.push(over("thm1_ratio_minus_4", &dev, 0.5));

    rows.push(over("woodbury_relative_gap", &woodbury_sweep(s(50), seed)?, 1e-8));
    let thm2: Vec<bool> = thm2_sweep(s(100), seed)?.iter().map(SurrogateBound::holds).collect();
    rows.push(flags("thm2_bound", &thm2));

    for (loss, name) in [(Loss::Mse, "thm3_median_gap_mse"), (Loss::Bce, "thm3_median_gap_bce")] {
        let gaps = thm3_sweep(s(50), loss, 1e-4, seed)?;
        let m = median(&gaps);
        rows.push(CheckRow {
            check: name.into(),
            trials: gaps.len(),
            violations: usize::from(!(m <= 0.1)),
            statistic: m,
            tolerance: 0.1,
            gating: false,
        });
    }

    let etf = etf_sweep(&[2, 3, 5, 10], 10, seed)?;
    let worst: Vec<f64> = etf
        .iter()
        .map(|r| r.relative_distance.max(r.maximality_gap.abs()))
        .collect();
    rows.push(over("etf_extremality", &worst, 1e-8));

    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let interp: Vec<bool> = interpolation_sweep(s(20), &alphas, seed)?
        .iter()
        .map(InterpolationGap::holds)
        .collect();
    rows.push(flags("ols_interpolation", &interp));
    rows.push(flags("prop1_alignment", &prop1_sweep(s(100), seed)?));
    rows.push(over("taylor_sum_relative_gap", &taylor_sweep(s(50), seed)?, 1e-8));
    let kant: Vec<bool> = kantorovich_sweep(s(200), seed)?
        .iter()
        .map(KantorovichCheck::holds)
        .collect();
    rows.push(flags("kantorovich", &kant));
    let region: Vec<bool> = region_sweep(s(500), seed)?.iter().map(RegionCrossing::holds).collect();
    rows.push(flags("region_crossings", &region));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn small_sweep_passes_every_contract() {
        let rows = run_all(0.1, 7).unwrap();
        for r in rows.iter().filter(|r| r.gating) {
            assert!(r.passed(), "{r:?}");
        }
    }
}
