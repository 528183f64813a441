use crate::error::{Error, Result};
use crate::linalg::decomp::{jacobi_eigen_sym, MAX_EIGEN_DIM};
use crate::linalg::matrix::{dot, norm2, Matrix};
use crate::rng::SplitMix64;

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "pearson",
            left: (x.len(), 1),
            right: (y.len(), 1),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks, ties share the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&ranks(x), &ranks(y))
}

#[derive(Clone, Debug)]
pub struct PcaProjection {
    /// N×k scores.
    pub projected: Matrix,
    /// Variance captured by each component, non-increasing.
    pub variances: Vec<f64>,
    /// Set when fewer than the requested number of components carry variance.
    pub rank_deficient: bool,
}

/// Projects the rows of `x` (N×d) onto the top-k principal directions.
///
/// Uses a dense eigensolve for `d ≤ 512` and power iteration with deflation
/// otherwise.
pub fn pca_project(x: &Matrix, k: usize) -> Result<PcaProjection> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("pca needs at least 2 samples".into()));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!("pca rank {k} outside 1..={}", n.min(d))));
    }
    let means = x.col_means();
    let centered = Matrix::from_fn(n, d, |r, c| x[(r, c)] - means[c]);
    let mut cov = centered.t_matmul(&centered)?.scale(1.0 / (n - 1) as f64);
    cov = cov.symmetrized()?;

    let (mut vals, vecs) = if d <= MAX_EIGEN_DIM {
        let e = jacobi_eigen_sym(&cov)?;
        let order: Vec<usize> = (0..k).collect();
        (e.eigenvalues[..k].to_vec(), e.eigenvectors.select_cols(&order))
    } else {
        top_eigen_power(&cov, k)
    };

    let tol = 1e-12 * cov.trace()?.abs().max(f64::MIN_POSITIVE);
    let available = vals.iter().take_while(|&&v| v > tol).count();
    let rank_deficient = available < k;
    vals.truncate(available);
    let keep: Vec<usize> = (0..available).collect();
    let vecs = vecs.select_cols(&keep);
    let projected = centered.matmul(&vecs)?;
    Ok(PcaProjection {
        projected,
        variances: vals,
        rank_deficient,
    })
}

fn top_eigen_power(a: &Matrix, k: usize) -> (Vec<f64>, Matrix) {
    let d = a.rows();
    let mut rng = SplitMix64::new(0x0BCA);
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut vals = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            for u in &found {
                let p = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            let nv = norm2(&v);
            if nv == 0.0 {
                break;
            }
            v.iter_mut().for_each(|a| *a /= nv);
            let w = a.matvec(&v).expect("square");
            let next = dot(&v, &w);
            v = w;
            let done = (next - lambda).abs() <= 1e-12 * next.abs();
            lambda = next;
            if done {
                break;
            }
        }
        for u in &found {
            let p = dot(u, &v);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let nv = norm2(&v);
        if nv > 0.0 {
            v.iter_mut().for_each(|a| *a /= nv);
        }
        vals.push(lambda.max(0.0));
        found.push(v);
    }
    let mut m = Matrix::zeros(d, k);
    for (c, v) in found.iter().enumerate() {
        m.set_col(c, v).expect("length");
    }
    (vals, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 5.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // Centered: (-1,0,1) and (-4/3,-1/3,5/3); r = 3 / sqrt(2 * 14/3).
        let want = 3.0 / (2.0f64 * 14.0 / 3.0).sqrt();
        let got = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.98198).abs() < 1e-5);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ConstantInput)));
    }

    #[test]
    fn spearman_handles_ties_and_monotone() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn pca_recovers_subspace() {
        let mut rng = SplitMix64::new(2);
        let basis = Matrix::from_fn(2, 5, |_, _| rng.normal());
        let coeffs = Matrix::from_fn(40, 2, |_, _| rng.normal());
        let x = coeffs.matmul(&basis).unwrap();
        let p = pca_project(&x, 2).unwrap();
        assert!(!p.rank_deficient);
        // Reconstruct from the scores through the orthonormal directions.
        let scores = &p.projected;
        let total: f64 = {
            let means = x.col_means();
            let c = Matrix::from_fn(40, 5, |r, k| x[(r, k)] - means[k]);
            c.frobenius_sq()
        };
        assert!((scores.frobenius_sq() - total).abs() <= 1e-8 * total);
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn pca_full_rank_preserves_variance() {
        let mut rng = SplitMix64::new(8);
        let x = Matrix::from_fn(200, 6, |_, _| rng.normal());
        let p = pca_project(&x, 6).unwrap();
        let means = x.col_means();
        let c = Matrix::from_fn(200, 6, |r, k| x[(r, k)] - means[k]);
        let trace = c.t_matmul(&c).unwrap().trace().unwrap() / 199.0;
        let kept: f64 = p.variances.iter().sum();
        assert!((kept - trace).abs() <= 1e-6 * trace);
    }

    #[test]
    fn pca_rank_one_flags_deficiency() {
        let x = Matrix::from_fn(10, 3, |r, c| r as f64 * (c as f64 + 1.0));
        let p = pca_project(&x, 2).unwrap();
        assert!(p.rank_deficient);
        assert_eq!(p.projected.cols(), 1);
        let p1 = pca_project(&x, 1).unwrap();
        assert!(!p1.rank_deficient);
    }

    #[test]
    fn power_path_matches_dense() {
        let mut rng = SplitMix64::new(31);
        let a = Matrix::from_fn(12, 12, |_, _| rng.normal());
        let s = a.t_matmul(&a).unwrap().symmetrized().unwrap();
        let (vals, _) = top_eigen_power(&s, 3);
        let e = jacobi_eigen_sym(&s).unwrap();
        for (v, want) in vals.iter().zip(&e.eigenvalues[..3]) {
            assert!((v - want).abs() <= 1e-6 * e.eigenvalues[0]);
        }
    }
}
