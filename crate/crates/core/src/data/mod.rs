//! Datasets: synthetic generators, binary loaders and label transforms.
//!
//! Samples are columns of `x` (d×N); targets are rows of `y` (N×C).

mod labels;
mod loaders;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SplitMix64;

pub use labels::{corrupt_labels, one_hot, one_hot_centered, standardize, Standardizer};
pub use loaders::{
    load_cifar_binary, load_idx, parse_cifar, parse_idx_images, parse_idx_labels, CifarVariant, IdxImages,
    CIFAR_PIXELS, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use synthetic::{mod_add, staircase, swiss_roll, SWISS_ROLL_SCALE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// Number of classes; 0 for regression targets.
    pub classes: usize,
    /// Whether `y` holds centered one-hot rows.
    pub centered: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// d×N inputs.
    pub x: Matrix,
    /// N×C targets.
    pub y: Matrix,
    /// Integer labels for classification data.
    pub labels: Option<Vec<usize>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix, labels: Option<Vec<usize>>, meta: DatasetMeta) -> Result<Self> {
        if x.cols() != y.rows() {
            return Err(Error::CountMismatch(format!(
                "{} input columns vs {} target rows",
                x.cols(),
                y.rows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != y.rows() {
                return Err(Error::CountMismatch(format!(
                    "{} labels vs {} targets",
                    l.len(),
                    y.rows()
                )));
            }
        }
        Ok(Self { x, y, labels, meta })
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.rows()
    }

    pub fn target_dim(&self) -> usize {
        self.y.cols()
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_cols(indices),
            y: self.y.select_rows(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            meta: self.meta.clone(),
        }
    }

    /// Seeded subset of `n` samples (all of them when `n ≥ len`).
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        let mut idx = SplitMix64::new(seed).permutation(self.len());
        idx.truncate(n.min(self.len()));
        self.select(&idx)
    }

    /// Seeded disjoint split into `(first n, rest)`.
    pub fn split(&self, n: usize, seed: u64) -> (Dataset, Dataset) {
        let idx = SplitMix64::new(seed).permutation(self.len());
        let n = n.min(self.len());
        (self.select(&idx[..n]), self.select(&idx[n..]))
    }

    /// Targets transposed to the network output layout (C×N).
    pub fn targets_by_column(&self) -> Matrix {
        self.y.transpose()
    }

    /// Same samples with targets rebuilt as (centered) one-hot rows.
    pub fn with_one_hot(&self, centered: bool) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no class labels", self.meta.name)))?;
        let y = if centered {
            one_hot_centered(labels, self.meta.classes)?
        } else {
            one_hot(labels, self.meta.classes)?
        };
        let mut meta = self.meta.clone();
        meta.centered = centered;
        Dataset::new(self.x.clone(), y, Some(labels.clone()), meta)
    }
}
