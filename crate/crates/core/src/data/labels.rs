use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if classes == 0 {
        return Err(Error::InvalidArgument("class count must be positive".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::BadLabel { label: bad, classes });
    }
    Ok(())
}

/// N×C indicator rows.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    check_labels(labels, classes)?;
    let mut y = Matrix::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        y[(r, l)] = 1.0;
    }
    Ok(y)
}

/// One-hot rows shifted by `−1/C`, so each row sums to zero.
pub fn one_hot_centered(labels: &[usize], classes: usize) -> Result<Matrix> {
    check_labels(labels, classes)?;
    let off = -1.0 / classes as f64;
    let on = 1.0 + off;
    let mut y = Matrix::filled(labels.len(), classes, off);
    for (r, &l) in labels.iter().enumerate() {
        y[(r, l)] = on;
    }
    Ok(y)
}

/// Resamples each label uniformly over the classes with probability `p`.
pub fn corrupt_labels(ds: &Dataset, p: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "corruption fraction must be in [0, 1], got {p}"
        )));
    }
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no class labels", ds.meta.name)))?;
    let classes = ds.meta.classes;
    let mut rng = SplitMix64::new(seed);
    let noisy: Vec<usize> = labels
        .iter()
        .map(|&l| if rng.bernoulli(p) { rng.below(classes) } else { l })
        .collect();
    let y = if ds.meta.centered {
        one_hot_centered(&noisy, classes)?
    } else {
        one_hot(&noisy, classes)?
    };
    let mut meta = ds.meta.clone();
    meta.name = format!("{}-corrupt{p}", meta.name);
    Dataset::new(ds.x.clone(), y, Some(noisy), meta)
}

/// Per-feature affine map fitted on one matrix and reusable on others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// 1 for features whose spread is below `1e-12`.
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on the rows (features) of a d×N matrix.
    pub fn fit(x: &Matrix) -> Self {
        let mean = x.row_means();
        let n = x.cols() as f64;
        let scale = (0..x.rows())
            .map(|r| {
                let var = x.row(r).iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "standardize",
                left: (self.mean.len(), 1),
                right: x.shape(),
            });
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            (x[(r, c)] - self.mean[r]) / self.scale[r]
        }))
    }

    pub fn invert(&self, z: &Matrix) -> Result<Matrix> {
        if z.rows() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "unstandardize",
                left: (self.mean.len(), 1),
                right: z.shape(),
            });
        }
        Ok(Matrix::from_fn(z.rows(), z.cols(), |r, c| {
            z[(r, c)] * self.scale[r] + self.mean[r]
        }))
    }
}

/// Zero-mean, unit-variance features; near-constant features are only centered.
pub fn standardize(x: &Matrix) -> (Matrix, Standardizer) {
    let s = Standardizer::fit(x);
    let out = s.apply(x).expect("fitted on the same shape");
    (out, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetMeta;

    #[test]
    fn centered_rows_sum_to_zero() {
        let y = one_hot_centered(&[0, 1, 2, 1], 3).unwrap();
        for r in 0..4 {
            assert!(y.row(r).iter().sum::<f64>().abs() < 1e-15);
            let sq: f64 = y.row(r).iter().map(|v| v * v).sum();
            assert!((sq - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        }
        let two = one_hot_centered(&[0], 2).unwrap();
        assert_eq!(two.row(0), &[0.5, -0.5]);
        let bal = one_hot_centered(&[0, 1, 2, 0, 1, 2], 3).unwrap();
        assert!(bal.col_means().iter().all(|m| m.abs() < 1e-15));
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(
            one_hot(&[3], 3),
            Err(Error::BadLabel { label: 3, classes: 3 })
        ));
    }

    fn labelled(n: usize, classes: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        Dataset::new(
            Matrix::zeros(1, n),
            one_hot(&labels, classes).unwrap(),
            Some(labels),
            DatasetMeta {
                name: "t".into(),
                classes,
                centered: false,
                seed: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn corruption_extremes_and_determinism() {
        let ds = labelled(4000, 10);
        assert_eq!(corrupt_labels(&ds, 0.0, 1).unwrap().labels, ds.labels);
        let full = corrupt_labels(&ds, 1.0, 2).unwrap();
        let agree = full
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .zip(ds.labels.as_ref().unwrap())
            .filter(|(a, b)| a == b)
            .count() as f64
            / 4000.0;
        // Binomial(4000, 0.1): 4 standard deviations ≈ 0.019.
        assert!((agree - 0.1).abs() < 0.019, "{agree}");
        assert_eq!(
            corrupt_labels(&ds, 0.3, 5).unwrap(),
            corrupt_labels(&ds, 0.3, 5).unwrap()
        );
    }

    #[test]
    fn standardize_cases() {
        let x = Matrix::from_rows(&[vec![1.0, -1.0, 1.0, -1.0], vec![5.0, 5.0, 5.0, 5.0]]).unwrap();
        let (z, s) = standardize(&x);
        assert_eq!(z.row(0), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(z.row(1), &[0.0; 4]);
        let back = s.invert(&z).unwrap();
        assert!(back.sub(&x).unwrap().max_abs() < 1e-12);
    }
}
