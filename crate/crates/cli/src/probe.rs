//! Layer-wise TL of externally dumped activations.

use std::path::Path;

use featlab::diagnostics::{dump, surrogate_features, target_linearity};
use featlab::linalg::pca_project;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::train::informative_targets;

#[derive(Clone, Debug, Serialize)]
pub struct ProbeRow {
    pub layer: usize,
    /// Feature dimension after the optional PCA.
    pub dim: usize,
    pub tl: f64,
    /// `‖HY‖²_F` of the (projected) features.
    pub surrogate: f64,
}

pub fn probe_dump(activations: &Path, targets: &Path, lambda: f64, pca: Option<usize>) -> CliResult<Vec<ProbeRow>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(CliError::ConfigInvalid(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let layers = dump::read_activations(activations)?;
    let y = informative_targets(&dump::read_targets(targets)?);
    layers
        .iter()
        .enumerate()
        .map(|(i, h)| {
            if h.cols() != y.rows() {
                return Err(CliError::Data(format!(
                    "layer {i} has {} samples but the targets have {}",
                    h.cols(),
                    y.rows()
                )));
            }
            let h = match pca {
                Some(k) if k < h.rows() => pca_project(&h.transpose(), k.min(h.cols()))?.projected.transpose(),
                _ => h.clone(),
            };
            Ok(ProbeRow {
                layer: i,
                dim: h.rows(),
                tl: target_linearity(&h, &y, lambda)?,
                surrogate: surrogate_features(&h, &y)?,
            })
        })
        .collect()
}

pub fn to_csv(rows: &[ProbeRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
