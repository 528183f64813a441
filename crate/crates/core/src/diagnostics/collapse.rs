//! Neural-collapse geometry of the surrogate and the latent interpolation bound.

use serde::{Deserialize, Serialize};

use crate::data::one_hot_centered;
use crate::error::{Error, Result};
use crate::linalg::{polar_orthogonalize, pseudo_inverse, Cholesky, Matrix};
use crate::rng::SplitMix64;

/// Above this many samples the N×N Gram is never formed.
pub const MAX_EXPLICIT_GRAM_N: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcReport {
    /// `tr(Σ_W) / tr(Σ_B)`.
    pub nc1: f64,
    /// `max |cos(μ_a − μ_G, μ_b − μ_G) + 1/(C−1)|` over class pairs.
    pub nc2: f64,
    /// `‖G_id − YYᵀ‖_F`.
    pub gid_distance: f64,
    /// `‖YYᵀ‖_F`.
    pub target_gram_norm: f64,
    /// `𝒮_cls(G_id) = tr(YᵀG_idY)`.
    pub surrogate: f64,
    /// `‖G_id‖_F · ‖YYᵀ‖_F`, the largest surrogate at that Gram norm.
    pub max_surrogate: f64,
    /// `max_surrogate − surrogate`, nonnegative by Cauchy–Schwarz.
    pub maximality_gap: f64,
}

impl NcReport {
    pub fn relative_distance(&self) -> f64 {
        self.gid_distance / self.target_gram_norm.max(f64::MIN_POSITIVE)
    }

    pub fn relative_gap(&self) -> f64 {
        self.maximality_gap / self.max_surrogate.max(f64::MIN_POSITIVE)
    }
}

fn class_means(h: &Matrix, labels: &[usize], classes: usize) -> (Matrix, Vec<usize>) {
    let mut means = Matrix::zeros(h.rows(), classes);
    let mut counts = vec![0usize; classes];
    for (b, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for r in 0..h.rows() {
            means[(r, l)] += h[(r, b)];
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            for r in 0..h.rows() {
                means[(r, c)] /= n as f64;
            }
        }
    }
    (means, counts)
}

/// Collapse metrics of features `h` (D×N) and the surrogate of
/// `G_id = HᵀWᵀWH` against centered one-hot labels.
pub fn nc_probe(h: &Matrix, labels: &[usize], classes: usize, w: &Matrix) -> Result<NcReport> {
    if labels.len() != h.cols() {
        return Err(Error::CountMismatch(format!(
            "{} labels vs {} feature columns",
            labels.len(),
            h.cols()
        )));
    }
    let y = one_hot_centered(labels, classes)?;
    let (means, counts) = class_means(h, labels, classes);
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "{} distinct classes present, need at least 2",
            present.len()
        )));
    }
    let n = h.cols() as f64;
    let global = h.row_means();

    let mut within = 0.0;
    for (b, &l) in labels.iter().enumerate() {
        within += (0..h.rows()).map(|r| (h[(r, b)] - means[(r, l)]).powi(2)).sum::<f64>();
    }
    within /= n;
    let centered: Vec<Vec<f64>> = present
        .iter()
        .map(|&c| (0..h.rows()).map(|r| means[(r, c)] - global[r]).collect())
        .collect();
    let between = centered
        .iter()
        .map(|m| m.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / present.len() as f64;
    let nc1 = within / between.max(f64::MIN_POSITIVE);

    let target_cos = -1.0 / (present.len() as f64 - 1.0);
    let mut nc2: f64 = 0.0;
    for a in 0..centered.len() {
        for b in a + 1..centered.len() {
            let dot: f64 = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum();
            let na: f64 = centered[a].iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = centered[b].iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = dot / (na * nb).max(f64::MIN_POSITIVE);
            nc2 = nc2.max((cos - target_cos).abs());
        }
    }

    // A = WH (k×N); G_id = AᵀA.
    let a = w.matmul(h)?;
    let target_gram_norm = y.t_matmul(&y)?.frobenius_norm();
    let surrogate = a.matmul(&y)?.frobenius_sq();
    let (gid_norm, gid_distance) = if h.cols() <= MAX_EXPLICIT_GRAM_N {
        let g = a.t_matmul(&a)?;
        let diff = g.sub(&y.matmul_t(&y)?)?;
        (g.frobenius_norm(), diff.frobenius_norm())
    } else {
        // ‖G − YYᵀ‖² = ‖G‖² + ‖YYᵀ‖² − 2 tr(YᵀGY), all from small matrices.
        let gn = a.matmul_t(&a)?.frobenius_norm();
        let sq = gn * gn + target_gram_norm * target_gram_norm - 2.0 * surrogate;
        (gn, sq.max(0.0).sqrt())
    };
    let max_surrogate = gid_norm * target_gram_norm;
    Ok(NcReport {
        nc1,
        nc2,
        gid_distance,
        target_gram_norm,
        surrogate,
        max_surrogate,
        maximality_gap: max_surrogate - surrogate,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtfFeatures {
    /// D×N features; every column equals its class mean.
    pub h: Matrix,
    pub labels: Vec<usize>,
    /// D×C simplex ETF of class means.
    pub means: Matrix,
    /// `M⁺`, so that `M⁺H` is the transposed centered one-hot matrix.
    pub w: Matrix,
}

/// Fully collapsed features whose class means form a randomly rotated
/// simplex ETF in `R^D`.
pub fn construct_etf(classes: usize, dim: usize, per_class: usize, seed: u64) -> Result<EtfFeatures> {
    if classes < 2 {
        return Err(Error::DegenerateLabels(format!(
            "ETF needs at least 2 classes, got {classes}"
        )));
    }
    if dim < classes {
        return Err(Error::InvalidArgument(format!(
            "ETF needs D >= C, got D={dim}, C={classes}"
        )));
    }
    if per_class == 0 {
        return Err(Error::InvalidArgument("need at least one sample per class".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let u = polar_orthogonalize(&Matrix::from_fn(dim, classes, |_, _| rng.normal()))?;
    let c = classes as f64;
    let centering = Matrix::from_fn(classes, classes, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / c);
    let means = u.matmul(&centering)?;
    let w = pseudo_inverse(&means, 1e-10)?;
    let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    let h = means.select_cols(&labels);
    Ok(EtfFeatures { h, labels, means, w })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationGap {
    pub alphas: Vec<f64>,
    /// Mean pairwise reconstruction error at each α.
    pub lhs: Vec<f64>,
    /// Mean OLS reconstruction error `(1/N) Σ ‖g(zᵢ) − xᵢ‖`.
    pub rhs: f64,
}

impl InterpolationGap {
    pub const SLACK: f64 = 1e-10;

    pub fn holds(&self) -> bool {
        self.lhs.iter().all(|&l| l <= self.rhs + Self::SLACK)
    }
}

/// OLS coefficients `(ZᵀZ)⁻¹ZᵀX`, jittered when `ZᵀZ` is singular.
fn ols_coefficients(z: &Matrix, x: &Matrix) -> Result<Matrix> {
    let mut gram = z.t_matmul(z)?;
    let rhs = z.t_matmul(x)?;
    match Cholesky::new(&gram) {
        Ok(ch) => ch.solve(&rhs),
        Err(_) => {
            let k = gram.rows() as f64;
            let jitter = 1e-10 * gram.trace()?.max(f64::MIN_POSITIVE) / k;
            gram.add_diag(jitter)?;
            Cholesky::new(&gram).map_err(|_| Error::DegenerateGram)?.solve(&rhs)
        }
    }
}

/// Evaluates the OLS decoder on every interpolated latent pair
/// `αzᵢ + (1−α)z_j` and compares against the interpolated targets.
pub fn ols_interpolation_gap(z: &Matrix, x: &Matrix, alphas: &[f64]) -> Result<InterpolationGap> {
    if z.rows() != x.rows() {
        return Err(Error::CountMismatch(format!(
            "{} latents vs {} targets",
            z.rows(),
            x.rows()
        )));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidArgument(format!("α must lie in [0, 1], got {a}")));
    }
    let n = z.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let beta = ols_coefficients(z, x)?;
    let fitted = z.matmul(&beta)?;
    let rhs = (0..n)
        .map(|i| {
            fitted
                .row(i)
                .iter()
                .zip(x.row(i))
                .map(|(f, t)| (f - t).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / n as f64;

    let mut lhs = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut total = 0.0;
        for i in 0..n {
            // Row j of the block holds the pair (i, j).
            let zi = z.row(i);
            let xi = x.row(i);
            let zmix = Matrix::from_fn(n, z.cols(), |j, c| alpha * zi[c] + (1.0 - alpha) * z[(j, c)]);
            let decoded = zmix.matmul(&beta)?;
            for j in 0..n {
                let xj = x.row(j);
                total += decoded
                    .row(j)
                    .iter()
                    .enumerate()
                    .map(|(c, g)| (g - (alpha * xi[c] + (1.0 - alpha) * xj[c])).powi(2))
                    .sum::<f64>()
                    .sqrt();
            }
        }
        lhs.push(total / (n * n) as f64);
    }
    Ok(InterpolationGap {
        alphas: alphas.to_vec(),
        lhs,
        rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(r, c, |_, _| rng.normal())
    }

    #[test]
    fn etf_geometry() {
        let two = construct_etf(2, 2, 3, 1).unwrap();
        let (a, b) = (two.means.col(0), two.means.col(1));
        assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);

        let three = construct_etf(3, 3, 1, 2).unwrap();
        let g = three.means.t_matmul(&three.means).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt() + 0.5).abs() < 1e-12);
                }
            }
        }

        let e = construct_etf(5, 8, 2, 3).unwrap();
        let pm = e.w.matmul(&e.means).unwrap();
        let want = Matrix::from_fn(5, 5, |i, j| if i == j { 1.0 } else { 0.0 } - 0.2);
        assert!(pm.sub(&want).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn etf_saturates_the_surrogate() {
        for c in [2, 3, 5, 10] {
            let e = construct_etf(c, c + 3, 4, c as u64).unwrap();
            let r = nc_probe(&e.h, &e.labels, c, &e.w).unwrap();
            assert!(r.relative_distance() <= 1e-8, "{r:?}");
            assert!(r.maximality_gap.abs() <= 1e-8, "{r:?}");
            assert!(r.nc1 <= 1e-20);
            assert!(r.nc2 <= 1e-10);
        }
    }

    #[test]
    fn random_features_leave_a_gap() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let r = nc_probe(&random(6, 30, 4), &labels, 3, &random(3, 6, 5)).unwrap();
        assert!(r.maximality_gap > 0.0);
        assert!(r.nc1 > 0.0);
        assert!(matches!(
            nc_probe(&random(6, 4, 6), &[1; 4], 3, &random(3, 6, 7)),
            Err(Error::DegenerateLabels(_))
        ));
    }

    #[test]
    fn large_batch_formula_matches_explicit_gram() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let h = random(5, 40, 8);
        let w = random(4, 5, 9);
        let r = nc_probe(&h, &labels, 4, &w).unwrap();
        let a = w.matmul(&h).unwrap();
        let gn = a.matmul_t(&a).unwrap().frobenius_norm();
        let sq = gn * gn + r.target_gram_norm.powi(2) - 2.0 * r.surrogate;
        assert!((sq.sqrt() - r.gid_distance).abs() <= 1e-9 * r.gid_distance);
    }

    #[test]
    fn interpolation_cases() {
        let z = random(12, 3, 10);
        let beta = random(3, 4, 11);
        let exact = ols_interpolation_gap(&z, &z.matmul(&beta).unwrap(), &[0.0, 0.5, 1.0]).unwrap();
        assert!(exact.rhs < 1e-12 && exact.lhs.iter().all(|&l| l < 1e-12));

        let x = random(12, 4, 12);
        let gap = ols_interpolation_gap(&z, &x, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        assert!(gap.holds(), "{gap:?}");
        // At the endpoints every pair reduces to a single reconstruction.
        assert!((gap.lhs[0] - gap.rhs).abs() < 1e-12);
        assert!((gap.lhs[4] - gap.rhs).abs() < 1e-12);
        assert!(gap.lhs[2] < gap.rhs);

        // Duplicate latent column: ZᵀZ singular, jitter path.
        let zs = Matrix::from_fn(12, 2, |r, _| z[(r, 0)]);
        assert!(ols_interpolation_gap(&zs, &x, &[0.5]).unwrap().holds());
        assert!(ols_interpolation_gap(&z, &x, &[1.5]).is_err());
    }
}
