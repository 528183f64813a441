use std::f64::consts::PI;

use crate::data::{one_hot, Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

/// Divides the spiral coordinates so the roll fits roughly in `[-1.5, 1.5]²`.
pub const SWISS_ROLL_SCALE: f64 = 3.0 * PI;

fn regression_meta(name: String, seed: u64) -> DatasetMeta {
    DatasetMeta {
        name,
        classes: 0,
        centered: false,
        seed,
    }
}

/// 2-D spiral `(t cos t, t sin t)/scale` plus Gaussian noise, with the
/// standardized angle `t` as the scalar target.
pub fn swiss_roll(n: usize, sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "swiss roll needs at least 2 points, got {n}"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be nonnegative, got {sigma}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let t: Vec<f64> = (0..n).map(|_| rng.uniform(1.5 * PI, 4.5 * PI)).collect();
    let mut x = Matrix::zeros(2, n);
    for (i, &ti) in t.iter().enumerate() {
        x[(0, i)] = ti * ti.cos() / SWISS_ROLL_SCALE + sigma * rng.normal();
        x[(1, i)] = ti * ti.sin() / SWISS_ROLL_SCALE + sigma * rng.normal();
    }
    let mean = t.iter().sum::<f64>() / n as f64;
    let sd = (t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let y = Matrix::from_fn(n, 1, |r, _| (t[r] - mean) / sd);
    Dataset::new(x, y, None, regression_meta(format!("swiss_roll-{n}"), seed))
}

fn staircase_value(x: &[f64]) -> f64 {
    let p1 = x[0];
    let p2 = p1 * x[1];
    let p3 = p2 * x[2];
    let p4 = p3 * x[3];
    p4 + p3 + p2 + p1
}

/// Gaussian inputs in `R^d` with target `x₁x₂x₃x₄ + x₁x₂x₃ + x₁x₂ + x₁`.
pub fn staircase(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if d < 4 {
        return Err(Error::InvalidArgument(format!("staircase needs d >= 4, got {d}")));
    }
    let mut rng = SplitMix64::new(seed);
    let x = Matrix::from_fn(d, n, |_, _| rng.normal());
    let y = Matrix::from_fn(n, 1, |r, _| staircase_value(&x.col(r)));
    Dataset::new(x, y, None, regression_meta(format!("staircase-{n}x{d}"), seed))
}

fn is_prime(p: usize) -> bool {
    p >= 2 && (2..).take_while(|k| k * k <= p).all(|k| !p.is_multiple_of(k))
}

/// All pairs `(a, b) ∈ Z_p²` as concatenated one-hots (2p×p²) labelled
/// `(a + b) mod p`, shuffled and split into `(train, test)`.
pub fn mod_add(p: usize, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !is_prime(p) {
        return Err(Error::InvalidArgument(format!("modulus must be prime, got {p}")));
    }
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in [0, 1], got {train_frac}"
        )));
    }
    let n = p * p;
    let mut x = Matrix::zeros(2 * p, n);
    let mut labels = Vec::with_capacity(n);
    for a in 0..p {
        for b in 0..p {
            let i = a * p + b;
            x[(a, i)] = 1.0;
            x[(p + b, i)] = 1.0;
            labels.push((a + b) % p);
        }
    }
    let y = one_hot(&labels, p)?;
    let meta = DatasetMeta {
        name: format!("mod_add-{p}"),
        classes: p,
        centered: false,
        seed,
    };
    let all = Dataset::new(x, y, Some(labels), meta)?;
    let n_train = (train_frac * n as f64).round() as usize;
    Ok(all.split(n_train, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pearson;

    #[test]
    fn noiseless_roll_lies_on_spiral() {
        let ds = swiss_roll(200, 0.0, 1).unwrap();
        let mut angles = Vec::new();
        for i in 0..200 {
            let (a, b) = (ds.x[(0, i)] * SWISS_ROLL_SCALE, ds.x[(1, i)] * SWISS_ROLL_SCALE);
            let r = a.hypot(b);
            assert!((1.5 * PI..=4.5 * PI).contains(&r));
            // Radius equals the angle, up to multiples of 2π.
            let k = ((r - b.atan2(a)) / (2.0 * PI)).round();
            assert!((b.atan2(a) + 2.0 * PI * k - r).abs() < 1e-9);
            angles.push(r);
        }
        let corr = pearson(&angles, &ds.y.col(0)).unwrap();
        assert!((corr - 1.0).abs() < 1e-12);
        assert_eq!(ds, swiss_roll(200, 0.0, 1).unwrap());
        assert_ne!(ds, swiss_roll(200, 0.0, 2).unwrap());
    }

    #[test]
    fn staircase_values() {
        let mut x = vec![0.0; 10];
        assert_eq!(staircase_value(&x), 0.0);
        x[..4].copy_from_slice(&[1.0; 4]);
        assert_eq!(staircase_value(&x), 4.0);
        let n = 4000;
        let ds = staircase(n, 10, 3).unwrap();
        let mean = ds.y.sum() / n as f64;
        // Var y = 1 + 1 + 1 + 1 for independent standard normals.
        assert!(mean.abs() <= 5.0 * 2.0 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn modular_addition() {
        let (tr, te) = mod_add(3, 1.0, 0).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 0));
        let labels = tr.labels.as_ref().unwrap();
        let i = (0..9).find(|&i| tr.x[(2, i)] == 1.0 && tr.x[(5, i)] == 1.0).unwrap();
        assert_eq!(labels[i], 1);
        let mut counts = [0; 3];
        labels.iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts, [3; 3]);

        let (tr, te) = mod_add(61, 0.5, 7).unwrap();
        assert_eq!(tr.len() + te.len(), 61 * 61);
        let key = |ds: &Dataset, i: usize| {
            ds.x.col(i).iter().position(|&v| v == 1.0).unwrap() * 100
                + ds.x.col(i).iter().rposition(|&v| v == 1.0).unwrap()
        };
        let mut seen: Vec<usize> = (0..tr.len())
            .map(|i| key(&tr, i))
            .chain((0..te.len()).map(|i| key(&te, i)))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 61 * 61);
        assert!(mod_add(4, 0.5, 0).is_err());
    }
}
