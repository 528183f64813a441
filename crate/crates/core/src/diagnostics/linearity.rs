//! Target linearity (ridge R²), its Woodbury form and the Gram surrogate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, jacobi_eigen_sym, operator_norm, Cholesky, Matrix};

/// Relative jitter used in place of λ = 0: `1e-8 · tr(HHᵀ)/d`.
pub const ZERO_RIDGE_JITTER: f64 = 1e-8;

/// Largest N for which the N×N Woodbury side is built explicitly.
pub const MAX_WOODBURY_N: usize = 256;

/// Largest dimension accepted by [`kantorovich_check`].
pub const MAX_KANTOROVICH_DIM: usize = 128;

/// Slack applied when comparing the two sides of an inequality.
pub const INEQUALITY_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetLinearity {
    /// Pooled R² over all target columns.
    pub pooled: f64,
    pub per_column: Vec<f64>,
}

fn check_targets(h: &Matrix, y: &Matrix) -> Result<()> {
    if h.cols() != y.rows() {
        return Err(Error::ShapeMismatch {
            op: "target linearity (H is d×N, Y is N×C)",
            left: h.shape(),
            right: y.shape(),
        });
    }
    if y.rows() < 2 || y.cols() == 0 {
        return Err(Error::InvalidArgument(
            "targets need at least 2 rows and 1 column".into(),
        ));
    }
    Ok(())
}

/// `HHᵀ + λI` with the zero-ridge jitter applied when `λ = 0`.
fn ridge_system(h: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge λ must be ≥ 0, got {lambda}")));
    }
    let mut a = h.matmul_t(h)?;
    let ridge = if lambda == 0.0 {
        ZERO_RIDGE_JITTER * a.trace()? / a.rows() as f64
    } else {
        lambda
    };
    a.add_diag(ridge)?;
    a.symmetrized()
}

/// Ridge fit `Ŷ = Hᵀ(HHᵀ + λI)⁻¹HY` solved in the d×d primal.
pub fn ridge_fit(h: &Matrix, y: &Matrix, lambda: f64) -> Result<Matrix> {
    check_targets(h, y)?;
    let a = ridge_system(h, lambda)?;
    let hy = h.matmul(y)?;
    let coef = match cholesky_solve(&a, &hy) {
        Ok(c) => c,
        Err(Error::NotPositiveDefinite { .. }) => return Err(Error::DegenerateGram),
        Err(e) => return Err(e),
    };
    h.t_matmul(&coef)
}

/// Target linearity with per-column detail.
pub fn target_linearity_report(h: &Matrix, y: &Matrix, lambda: f64) -> Result<TargetLinearity> {
    let yhat = ridge_fit(h, y, lambda)?;
    let means = y.col_means();
    let (n, c) = y.shape();
    let mut res = vec![0.0; c];
    let mut tot = vec![0.0; c];
    for r in 0..n {
        for k in 0..c {
            res[k] += (y[(r, k)] - yhat[(r, k)]).powi(2);
            tot[k] += (y[(r, k)] - means[k]).powi(2);
        }
    }
    if tot.contains(&0.0) {
        return Err(Error::ConstantInput);
    }
    let pooled = 1.0 - res.iter().sum::<f64>() / tot.iter().sum::<f64>();
    let per_column = res.iter().zip(&tot).map(|(r, t)| 1.0 - r / t).collect();
    Ok(TargetLinearity { pooled, per_column })
}

/// `1 − ‖Y − Ŷ_λ‖² / ‖Y − Ȳ‖²` pooled over target columns.
pub fn target_linearity(h: &Matrix, y: &Matrix, lambda: f64) -> Result<f64> {
    Ok(target_linearity_report(h, y, lambda)?.pooled)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WoodburyCheck {
    /// `‖Y − Ŷ_λ‖²` from the primal ridge fit.
    pub primal: f64,
    /// `λ² tr(Yᵀ(λI + HᵀH)⁻²Y)` from the N×N dual.
    pub dual: f64,
    pub relative_gap: f64,
}

/// Compares the ridge residual with its Woodbury rewriting.
pub fn woodbury_error_check(h: &Matrix, y: &Matrix, lambda: f64) -> Result<WoodburyCheck> {
    check_targets(h, y)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "woodbury form needs λ > 0, got {lambda}"
        )));
    }
    let n = h.cols();
    if n > MAX_WOODBURY_N {
        return Err(Error::TooLarge {
            op: "woodbury_error_check",
            dim: n,
            max: MAX_WOODBURY_N,
        });
    }
    let primal = y.sub(&ridge_fit(h, y, lambda)?)?.frobenius_sq();
    let mut k = h.t_matmul(h)?;
    k.add_diag(lambda)?;
    let k = k.symmetrized()?;
    let once = cholesky_solve(&k, y)?;
    let dual = lambda * lambda * once.frobenius_sq();
    let relative_gap = (primal - dual).abs() / primal.abs().max(dual.abs()).max(f64::MIN_POSITIVE);
    Ok(WoodburyCheck {
        primal,
        dual,
        relative_gap,
    })
}

/// `tr(YᵀGY)` for an explicit N×N Gram.
pub fn surrogate(g: &Matrix, y: &Matrix) -> Result<f64> {
    if g.rows() != y.rows() || !g.is_square() {
        return Err(Error::ShapeMismatch {
            op: "surrogate",
            left: g.shape(),
            right: y.shape(),
        });
    }
    g.matmul(y)?.inner(y)
}

/// `tr(Yᵀ HᵀWᵀW H Y) = ‖W(HY)‖²_F`, never forming the N×N Gram.
pub fn surrogate_gid(w: &Matrix, h: &Matrix, y: &Matrix) -> Result<f64> {
    check_targets(h, y)?;
    Ok(w.matmul(&h.matmul(y)?)?.frobenius_sq())
}

/// `tr(Yᵀ HᵀH Y) = ‖HY‖²_F`, the surrogate of the layer's own features.
pub fn surrogate_features(h: &Matrix, y: &Matrix) -> Result<f64> {
    check_targets(h, y)?;
    Ok(h.matmul(y)?.frobenius_sq())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateBound {
    pub tl: f64,
    /// `1 − C / 𝒮(G_id)`.
    pub bound: f64,
    pub constant: f64,
    pub surrogate: f64,
}

impl SurrogateBound {
    pub fn holds(&self) -> bool {
        self.tl >= self.bound - INEQUALITY_SLACK * self.bound.abs().max(1.0)
    }
}

/// Lower bound on TL of `H` through the next layer's linearized surrogate.
///
/// `C = e₀⁻¹ e₁² c₀² (2λ + c₁²)² / (4λ)` with `e₀ = ‖y − ȳ‖²`, `e₁ = ‖y‖²`.
/// The bound is only established for a single target column.
pub fn thm2_bound_check(h: &Matrix, y: &Matrix, w: &Matrix, lambda: f64, c0: f64, c1: f64) -> Result<SurrogateBound> {
    check_targets(h, y)?;
    if y.cols() != 1 {
        return Err(Error::InvalidArgument(format!(
            "surrogate bound needs a single target column, got {}",
            y.cols()
        )));
    }
    if w.cols() != h.rows() {
        return Err(Error::ShapeMismatch {
            op: "thm2 weight",
            left: w.shape(),
            right: h.shape(),
        });
    }
    let (d, n) = h.shape();
    let mut failed = Vec::new();
    if !(lambda > 0.0) {
        failed.push(format!("λ = {lambda} is not > 0"));
    }
    let w_op = operator_norm(w);
    if w_op > c0 * (1.0 + INEQUALITY_SLACK) {
        failed.push(format!("‖W‖_op = {w_op} exceeds c0 = {c0}"));
    }
    let h_f = h.frobenius_norm();
    if h_f > c1 * (1.0 + INEQUALITY_SLACK) {
        failed.push(format!("‖H‖_F = {h_f} exceeds c1 = {c1}"));
    }
    if n <= d {
        failed.push(format!("N = {n} is not > d = {d}"));
    }
    if !failed.is_empty() {
        return Err(Error::AssumptionViolated(failed.join("; ")));
    }
    let tl = target_linearity(h, y, lambda)?;
    let mean = y.sum() / n as f64;
    let e0: f64 = y.as_slice().iter().map(|v| (v - mean).powi(2)).sum();
    let e1 = y.frobenius_sq();
    let constant = e1 * e1 * c0 * c0 * (2.0 * lambda + c1 * c1).powi(2) / (4.0 * lambda * e0);
    let s = surrogate_gid(w, h, y)?;
    let bound = if s > 0.0 { 1.0 - constant / s } else { f64::NEG_INFINITY };
    Ok(SurrogateBound {
        tl,
        bound,
        constant,
        surrogate: s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KantorovichCheck {
    /// `yᵀ(λI + G)⁻²y`.
    pub lhs: f64,
    /// `κ ‖y‖⁴ / yᵀ(λI + G)y`.
    pub rhs: f64,
    pub kappa: f64,
}

impl KantorovichCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + INEQUALITY_SLACK)
    }
}

/// Spectral bound relating the squared-inverse error form to the surrogate.
pub fn kantorovich_check(g: &Matrix, y: &[f64], lambda: f64) -> Result<KantorovichCheck> {
    let n = g.rows();
    if !g.is_square() || y.len() != n {
        return Err(Error::ShapeMismatch {
            op: "kantorovich_check",
            left: g.shape(),
            right: (y.len(), 1),
        });
    }
    if n > MAX_KANTOROVICH_DIM {
        return Err(Error::TooLarge {
            op: "kantorovich_check",
            dim: n,
            max: MAX_KANTOROVICH_DIM,
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("λ must be > 0, got {lambda}")));
    }
    let eig = jacobi_eigen_sym(g)?;
    let (lmax, lmin) = (eig.max(), eig.min().max(0.0));
    let kappa = (2.0 * lambda + lmax + lmin).powi(2) / (4.0 * (lambda + lmin).powi(3));

    let mut a = g.symmetrized()?;
    a.add_diag(lambda)?;
    let yv = Matrix::column_vector(y);
    let once = Cholesky::new(&a)?.solve(&yv)?;
    let lhs = once.frobenius_sq();
    let quad = a.matmul(&yv)?.inner(&yv)?;
    let y2 = yv.frobenius_sq();
    Ok(KantorovichCheck {
        lhs,
        rhs: kappa * y2 * y2 / quad,
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(r, c, |_, _| rng.normal())
    }

    fn centered(y: &Matrix) -> Matrix {
        let m = y.col_means();
        Matrix::from_fn(y.rows(), y.cols(), |r, c| y[(r, c)] - m[c])
    }

    /// Normal equations through an explicit inverse built by Gauss–Jordan.
    fn dense_inverse(a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut aug = Matrix::from_fn(n, 2 * n, |r, c| {
            if c < n {
                a[(r, c)]
            } else if c - n == r {
                1.0
            } else {
                0.0
            }
        });
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| aug[(i, col)].abs().total_cmp(&aug[(j, col)].abs()))
                .unwrap();
            for c in 0..2 * n {
                let t = aug[(col, c)];
                aug[(col, c)] = aug[(piv, c)];
                aug[(piv, c)] = t;
            }
            let p = aug[(col, col)];
            for c in 0..2 * n {
                aug[(col, c)] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[(r, col)];
                    for c in 0..2 * n {
                        let v = aug[(col, c)];
                        aug[(r, c)] -= f * v;
                    }
                }
            }
        }
        Matrix::from_fn(n, n, |r, c| aug[(r, c + n)])
    }

    #[test]
    fn self_regression_is_perfect() {
        let y = centered(&random(20, 2, 1));
        let tl = target_linearity(&y.transpose(), &y, 0.0).unwrap();
        assert!((tl - 1.0).abs() < 1e-6);
    }

    #[test]
    fn huge_ridge_drives_tl_to_zero() {
        let h = random(3, 30, 2);
        let y = centered(&random(30, 1, 3));
        let tl = target_linearity(&h, &y, 1e12).unwrap();
        assert!(tl.abs() < 1e-8);
    }

    #[test]
    fn matches_dense_normal_equations() {
        let h = random(8, 20, 4);
        let y = random(20, 1, 5);
        let lambda = 0.3;
        let mut a = h.matmul_t(&h).unwrap();
        a.add_diag(lambda).unwrap();
        let yhat = h
            .t_matmul(&dense_inverse(&a).matmul(&h.matmul(&y).unwrap()).unwrap())
            .unwrap();
        let mean = y.sum() / 20.0;
        let tot: f64 = y.as_slice().iter().map(|v| (v - mean).powi(2)).sum();
        let want = 1.0 - y.sub(&yhat).unwrap().frobenius_sq() / tot;
        let got = target_linearity(&h, &y, lambda).unwrap();
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }

    #[test]
    fn per_column_and_pooled_agree_for_one_column() {
        let h = random(4, 25, 6);
        let y = random(25, 1, 7);
        let r = target_linearity_report(&h, &y, 0.1).unwrap();
        assert!((r.pooled - r.per_column[0]).abs() < 1e-15);
    }

    #[test]
    fn constant_target_and_zero_features_are_errors() {
        let h = random(2, 5, 1);
        assert!(matches!(
            target_linearity(&h, &Matrix::filled(5, 1, 3.0), 0.1),
            Err(Error::ConstantInput)
        ));
        assert!(matches!(
            target_linearity(&Matrix::zeros(2, 5), &random(5, 1, 2), 0.0),
            Err(Error::DegenerateGram)
        ));
    }

    #[test]
    fn woodbury_sides_agree() {
        let h = random(6, 40, 8);
        let y = random(40, 2, 9);
        let c = woodbury_error_check(&h, &y, 0.7).unwrap();
        assert!(c.relative_gap <= 1e-8);
        let zero = woodbury_error_check(&Matrix::zeros(6, 40), &y, 0.7).unwrap();
        assert!((zero.dual - y.frobenius_sq()).abs() <= 1e-12 * y.frobenius_sq());
        assert!((zero.primal - y.frobenius_sq()).abs() <= 1e-12 * y.frobenius_sq());
    }

    #[test]
    fn surrogate_cases() {
        let y = random(6, 1, 10);
        let s = surrogate(&Matrix::identity(6), &y).unwrap();
        assert!((s - y.frobenius_sq()).abs() < 1e-12);
        let g = y.matmul_t(&y).unwrap();
        assert!((surrogate(&g, &y).unwrap() - y.frobenius_sq().powi(2)).abs() < 1e-10);

        let w = random(3, 4, 11);
        let h = random(4, 6, 12);
        let wh = w.matmul(&h).unwrap();
        let gid = wh.t_matmul(&wh).unwrap();
        let direct = surrogate(&gid, &y).unwrap();
        assert!((surrogate_gid(&w, &h, &y).unwrap() - direct).abs() <= 1e-10 * direct);
    }

    #[test]
    fn thm2_rejects_violated_assumptions() {
        let h = random(5, 4, 1);
        let y = random(4, 1, 2);
        let w = random(3, 5, 3);
        let err = thm2_bound_check(&h, &y, &w, 0.1, 1e-3, 1e-3).unwrap_err();
        match err {
            Error::AssumptionViolated(msg) => {
                assert!(msg.contains("c0") && msg.contains("c1") && msg.contains("N ="));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn thm2_bound_holds_on_random_instance() {
        let h = random(4, 30, 5);
        let y = random(30, 1, 6);
        let w = random(3, 4, 7);
        let c0 = operator_norm(&w);
        let c1 = h.frobenius_norm();
        let r = thm2_bound_check(&h, &y, &w, 0.5, c0, c1).unwrap();
        assert!(r.holds(), "{r:?}");
    }

    #[test]
    fn kantorovich_isotropic_equality() {
        let mu = 2.5;
        let g = Matrix::identity(5).scale(mu);
        let y = [1.0, -2.0, 0.5, 0.0, 3.0];
        let k = kantorovich_check(&g, &y, 0.4).unwrap();
        assert!((k.lhs - k.rhs).abs() <= 1e-12 * k.rhs);
        assert!(k.holds());
    }
}
