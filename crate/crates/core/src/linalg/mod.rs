//! Dense linear algebra on row-major `f64` matrices.

mod decomp;
mod matrix;
mod stats;

pub use decomp::{
    cholesky_solve, jacobi_eigen_sym, operator_norm, polar_orthogonalize, pseudo_inverse, Cholesky, EigenDecomp,
    MAX_EIGEN_DIM, NEWTON_SCHULZ_MAX_STEPS, NEWTON_SCHULZ_MIN_STEPS, NEWTON_SCHULZ_TOL,
};
pub(crate) use matrix::dot;
pub use matrix::Matrix;
pub use stats::{pca_project, pearson, spearman, PcaProjection};
