use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, norm2, Matrix};
use crate::rng::SplitMix64;

/// Relative asymmetry tolerated by the symmetric solvers.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Largest dimension accepted by [`jacobi_eigen_sym`].
pub const MAX_EIGEN_DIM: usize = 512;

/// Newton–Schulz always runs at least this many cubic steps.
pub const NEWTON_SCHULZ_MIN_STEPS: usize = 15;
/// Hard cap on Newton–Schulz steps.
pub const NEWTON_SCHULZ_MAX_STEPS: usize = 100;
/// Stop once a step moves the (unit-Frobenius) iterate by less than this.
pub const NEWTON_SCHULZ_TOL: f64 = 1e-10;

fn check_symmetric(a: &Matrix) -> Result<()> {
    let asym = a.asymmetry()?;
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch {
                op: "cholesky",
                left: a.shape(),
                right: (a.cols(), a.rows()),
            });
        }
        check_symmetric(a)?;
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
                let v = a[(i, j)] - s;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::NotPositiveDefinite { index: i, pivot: v });
                    }
                    l[(i, i)] = v.sqrt();
                } else {
                    l[(i, j)] = v / l[(j, j)];
                }
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// Solves `A X = B` for every column of `B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.lower.rows();
        if b.rows() != n {
            return Err(Error::ShapeMismatch {
                op: "cholesky_solve",
                left: self.lower.shape(),
                right: b.shape(),
            });
        }
        let m = b.cols();
        let l = &self.lower;
        // Forward: L Y = B, row by row so inner loops stay contiguous.
        let mut y = b.clone();
        for i in 0..n {
            for k in 0..i {
                let lik = l[(i, k)];
                if lik == 0.0 {
                    continue;
                }
                for c in 0..m {
                    let v = y[(k, c)];
                    y[(i, c)] -= lik * v;
                }
            }
            let d = l[(i, i)];
            y.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
        // Backward: Lᵀ X = Y.
        let mut x = y;
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = l[(k, i)];
                if lki == 0.0 {
                    continue;
                }
                for c in 0..m {
                    let v = x[(k, c)];
                    x[(i, c)] -= lki * v;
                }
            }
            let d = l[(i, i)];
            x.row_mut(i).iter_mut().for_each(|v| *v /= d);
        }
        Ok(x)
    }
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Cholesky::new(a)?.solve(b)
}

/// Symmetric eigendecomposition, eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct EigenDecomp {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: Matrix,
}

impl EigenDecomp {
    pub fn max(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// `Q Λ Qᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for r in 0..q.rows() {
            for (c, v) in scaled.row_mut(r).iter_mut().enumerate() {
                *v *= self.eigenvalues[c];
            }
        }
        scaled.matmul_t(q).expect("square factors")
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices up to [`MAX_EIGEN_DIM`].
pub fn jacobi_eigen_sym(a: &Matrix) -> Result<EigenDecomp> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch {
            op: "jacobi_eigen_sym",
            left: a.shape(),
            right: (a.cols(), a.rows()),
        });
    }
    let n = a.rows();
    if n > MAX_EIGEN_DIM {
        return Err(Error::TooLarge {
            op: "jacobi_eigen_sym",
            dim: n,
            max: MAX_EIGEN_DIM,
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("jacobi_eigen_sym input"));
    }
    check_symmetric(a)?;
    let mut m = a.symmetrized()?;
    let mut v = Matrix::identity(n);
    let total = m.frobenius_norm();

    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let eigenvectors = v.select_cols(&order);
    Ok(EigenDecomp {
        eigenvalues,
        eigenvectors,
    })
}

/// Orthogonal polar factor `U Vᵀ` of `M = U Σ Vᵀ` by the cubic Newton–Schulz
/// iteration `X ← 1.5 X − 0.5 X Xᵀ X` from `X₀ = M / ‖M‖_F`.
///
/// Runs at least [`NEWTON_SCHULZ_MIN_STEPS`] steps and continues until a step
/// changes the iterate by less than [`NEWTON_SCHULZ_TOL`] (capped at
/// [`NEWTON_SCHULZ_MAX_STEPS`]). Singular directions that are exactly zero stay
/// zero, so for rank-deficient `M` the result is a partial isometry.
pub fn polar_orthogonalize(m: &Matrix) -> Result<Matrix> {
    let norm = m.frobenius_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("polar_orthogonalize input"));
    }
    if norm == 0.0 {
        return Err(Error::DegenerateInput("polar factor of a zero matrix"));
    }
    let mut x = m.scale(1.0 / norm);
    let wide = m.rows() <= m.cols();
    for step in 0..NEWTON_SCHULZ_MAX_STEPS {
        let cubic = if wide {
            x.matmul_t(&x)?.matmul(&x)?
        } else {
            x.matmul(&x.t_matmul(&x)?)?
        };
        let mut next = x.scale(1.5);
        next.axpy(-0.5, &cubic)?;
        let delta = next.sub(&x)?.frobenius_norm();
        x = next;
        if step + 1 >= NEWTON_SCHULZ_MIN_STEPS && delta <= NEWTON_SCHULZ_TOL {
            break;
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("polar_orthogonalize"));
    }
    Ok(x)
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn operator_norm(a: &Matrix) -> f64 {
    if a.is_empty() || a.max_abs() == 0.0 {
        return 0.0;
    }
    let n = a.cols();
    let mut rng = SplitMix64::new(0x5EED_0F0F);
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut estimate = 0.0;
    for _ in 0..200 {
        let av = a.matvec(&v).expect("shape");
        let mut w = a.t_matvec(&av).expect("shape");
        let rayleigh = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        let done = (rayleigh - estimate).abs() <= 1e-10 * rayleigh.abs();
        estimate = rayleigh;
        if done {
            break;
        }
    }
    // One more Rayleigh quotient at the final vector.
    let av = a.matvec(&v).expect("shape");
    dot(&av, &av).max(estimate).sqrt()
}

/// Moore–Penrose pseudoinverse via the eigendecomposition of the smaller Gram.
/// Singular values below `rcond · σ_max` are treated as zero.
pub fn pseudo_inverse(m: &Matrix, rcond: f64) -> Result<Matrix> {
    let tall = m.rows() >= m.cols();
    // M⁺ = (MᵀM)⁺ Mᵀ for tall M, Mᵀ (MMᵀ)⁺ for wide M.
    let gram = if tall { m.t_matmul(m)? } else { m.matmul_t(m)? };
    let eig = jacobi_eigen_sym(&gram.symmetrized()?)?;
    // The Gram squares the condition number, so the floor sits well above
    // round-off in λ rather than in σ.
    let n = gram.rows() as f64;
    let cutoff = eig.max().max(0.0) * (rcond * rcond).max(64.0 * f64::EPSILON * n);
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for r in 0..q.rows() {
        for (c, v) in scaled.row_mut(r).iter_mut().enumerate() {
            let lambda = eig.eigenvalues[c];
            *v *= if lambda > cutoff && lambda > 0.0 {
                1.0 / lambda
            } else {
                0.0
            };
        }
    }
    let gram_pinv = scaled.matmul_t(q)?;
    if tall {
        gram_pinv.matmul_t(m)
    } else {
        m.t_matmul(&gram_pinv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let a = random(n, n, seed);
        let mut s = a.t_matmul(&a).unwrap();
        s.add_diag(n as f64 * 0.1).unwrap();
        s.symmetrized().unwrap()
    }

    #[test]
    fn cholesky_identity_returns_rhs() {
        let b = random(3, 4, 1);
        let x = cholesky_solve(&Matrix::identity(3), &b).unwrap();
        assert!(x.sub(&b).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn cholesky_diagonal() {
        let a = Matrix::from_diag(&[2.0, 4.0]);
        let b = Matrix::column_vector(&[2.0, 4.0]);
        let x = cholesky_solve(&a, &b).unwrap();
        assert!(x.sub(&Matrix::column_vector(&[1.0, 1.0])).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn cholesky_residual_random_spd() {
        let a = random_spd(8, 11);
        let b = random(8, 3, 12);
        let x = cholesky_solve(&a, &b).unwrap();
        let r = a.matmul(&x).unwrap().sub(&b).unwrap().frobenius_norm();
        assert!(r <= 1e-8 * b.frobenius_norm(), "residual {r}");
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let a = Matrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(
            cholesky_solve(&a, &Matrix::column_vector(&[1.0, 1.0])),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(Cholesky::new(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn jacobi_diagonal_and_two_by_two() {
        let e = jacobi_eigen_sym(&Matrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        let q = &e.eigenvectors;
        assert!((q[(0, 1)].abs() - 1.0).abs() < 1e-15 && (q[(1, 0)].abs() - 1.0).abs() < 1e-15);

        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = jacobi_eigen_sym(&a).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let a = random(10, 10, 5);
        let s = a.add(&a.transpose()).unwrap();
        let e = jacobi_eigen_sym(&s).unwrap();
        let q = &e.eigenvectors;
        let orth = q.t_matmul(q).unwrap().sub(&Matrix::identity(10)).unwrap();
        assert!(orth.frobenius_norm() <= 1e-8 * 10.0);
        let rec = e.reconstruct().sub(&s).unwrap().frobenius_norm();
        assert!(rec <= 1e-7 * s.frobenius_norm());
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn jacobi_rejects_asymmetric_and_oversized() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(jacobi_eigen_sym(&a), Err(Error::NotSymmetric(_))));
        let big = Matrix::identity(MAX_EIGEN_DIM + 1);
        assert!(matches!(jacobi_eigen_sym(&big), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn polar_of_identity_and_scaled_rotation() {
        let q = polar_orthogonalize(&Matrix::identity(4)).unwrap();
        assert!(q.sub(&Matrix::identity(4)).unwrap().frobenius_norm() < 1e-12);

        let th = 0.7f64;
        let r = Matrix::from_rows(&[vec![th.cos(), -th.sin()], vec![th.sin(), th.cos()]]).unwrap();
        let q = polar_orthogonalize(&r.scale(3.0)).unwrap();
        assert!(q.sub(&r).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn polar_matches_svd_oracle() {
        // Oracle: MᵀM = V Σ² Vᵀ by Jacobi, then Q = M V Σ⁻¹ Vᵀ.
        let m = random(6, 4, 21);
        let e = jacobi_eigen_sym(&m.t_matmul(&m).unwrap()).unwrap();
        let v = &e.eigenvectors;
        let inv_sigma: Vec<f64> = e.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
        let mut v_scaled = v.clone();
        for r in 0..4 {
            for c in 0..4 {
                v_scaled[(r, c)] *= inv_sigma[c];
            }
        }
        let oracle = m.matmul(&v_scaled).unwrap().matmul_t(v).unwrap();
        let q = polar_orthogonalize(&m).unwrap();
        assert!(q.sub(&oracle).unwrap().frobenius_norm() <= 1e-4);
        let orth = q.t_matmul(&q).unwrap().sub(&Matrix::identity(4)).unwrap();
        assert!(orth.frobenius_norm() <= 1e-6);
    }

    #[test]
    fn polar_of_zero_is_degenerate() {
        assert!(matches!(
            polar_orthogonalize(&Matrix::zeros(3, 2)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn operator_norm_cases() {
        assert!((operator_norm(&Matrix::from_diag(&[5.0, 2.0])) - 5.0).abs() < 1e-9);
        assert!((operator_norm(&Matrix::identity(6)) - 1.0).abs() < 1e-12);
        assert_eq!(operator_norm(&Matrix::zeros(3, 3)), 0.0);

        let a = random(8, 8, 9);
        let e = jacobi_eigen_sym(&a.t_matmul(&a).unwrap()).unwrap();
        let want = e.max().sqrt();
        let got = operator_norm(&a);
        assert!((got - want).abs() <= 1e-6 * want, "{got} vs {want}");
    }

    #[test]
    fn pseudo_inverse_of_rank_deficient() {
        // Rank-2 3×3 matrix: M M⁺ M = M.
        let u = random(3, 2, 4);
        let m = u.matmul_t(&u).unwrap();
        let p = pseudo_inverse(&m, 1e-10).unwrap();
        let back = m.matmul(&p).unwrap().matmul(&m).unwrap();
        assert!(back.sub(&m).unwrap().frobenius_norm() < 1e-9 * m.frobenius_norm());
    }
}
