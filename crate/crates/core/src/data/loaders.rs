//! IDX (MNIST) and CIFAR binary readers.

use std::fs;
use std::path::Path;

use crate::data::{one_hot, Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_PIXELS: usize = 3072;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::TruncatedFile(format!("{what} header")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Raw u8 pixels, image after image.
    pub pixels: Vec<u8>,
}

/// Parses an IDX image file; pixel payload may be omitted when only the
/// header is of interest (`header_only`).
pub fn parse_idx_images(bytes: &[u8], header_only: bool) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, "idx images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "idx images")? as usize;
    let rows = be_u32(bytes, 8, "idx images")? as usize;
    let cols = be_u32(bytes, 12, "idx images")? as usize;
    if header_only {
        return Ok(IdxImages {
            count,
            rows,
            cols,
            pixels: Vec::new(),
        });
    }
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::TruncatedFile(format!(
            "idx images: need {need} pixel bytes, found {}",
            body.len()
        )));
    }
    if body.len() > need {
        return Err(Error::CountMismatch(format!(
            "idx images: {} bytes beyond {count} images",
            body.len() - need
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "idx labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "idx labels")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::TruncatedFile(format!(
            "idx labels: need {count} bytes, found {}",
            body.len()
        )));
    }
    if body.len() > count {
        return Err(Error::CountMismatch(format!(
            "idx labels: {} trailing bytes",
            body.len() - count
        )));
    }
    Ok(body.to_vec())
}

/// MNIST-style dataset: pixels scaled to `[0, 1]`, one-hot targets.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = parse_idx_images(&fs::read(images)?, false)?;
    let lab = parse_idx_labels(&fs::read(labels)?)?;
    if img.count != lab.len() {
        return Err(Error::CountMismatch(format!(
            "{} images vs {} labels",
            img.count,
            lab.len()
        )));
    }
    let d = img.rows * img.cols;
    let n = img.count;
    // Pixels arrive sample-major; the dataset wants samples as columns.
    let x = Matrix::from_fn(d, n, |r, c| img.pixels[c * d + r] as f64 / 255.0);
    let labels: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let name = images
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(
        x,
        one_hot(&labels, classes)?,
        Some(labels),
        DatasetMeta {
            name,
            classes,
            centered: false,
            seed: 0,
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    /// One label byte per record.
    Cifar10,
    /// Coarse and fine label bytes; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            Self::Cifar10 => 1 + CIFAR_PIXELS,
            Self::Cifar100 => 2 + CIFAR_PIXELS,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Self::Cifar10 => 10,
            Self::Cifar100 => 100,
        }
    }
}

/// Labels and u8 pixels of a CIFAR binary batch.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant) -> Result<(Vec<usize>, Vec<u8>)> {
    let rec = variant.record_len();
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::TruncatedFile(format!(
            "cifar batch of {} bytes is not a multiple of {rec}",
            bytes.len()
        )));
    }
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * CIFAR_PIXELS);
    for chunk in bytes.chunks_exact(rec) {
        let label = chunk[rec - CIFAR_PIXELS - 1] as usize;
        if label >= variant.classes() {
            return Err(Error::BadLabel {
                label,
                classes: variant.classes(),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&chunk[rec - CIFAR_PIXELS..]);
    }
    Ok((labels, pixels))
}

/// Concatenates CIFAR binary batches; pixels scaled to `[0, 1]`, shape 3072×N.
pub fn load_cifar_binary(paths: &[&Path], variant: CifarVariant) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for p in paths {
        let (l, px) = parse_cifar(&fs::read(p)?, variant)?;
        labels.extend(l);
        pixels.extend(px);
    }
    let n = labels.len();
    let x = Matrix::from_fn(CIFAR_PIXELS, n, |r, c| pixels[c * CIFAR_PIXELS + r] as f64 / 255.0);
    let classes = variant.classes();
    Dataset::new(
        x,
        one_hot(&labels, classes)?,
        Some(labels),
        DatasetMeta {
            name: match variant {
                CifarVariant::Cifar10 => "cifar10".into(),
                CifarVariant::Cifar100 => "cifar100".into(),
            },
            classes,
            centered: false,
            seed: 0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(body);
        b
    }

    #[test]
    fn official_mnist_header() {
        // First 16 bytes of train-images-idx3-ubyte.
        let header = [0, 0, 8, 3, 0, 0, 0xEA, 0x60, 0, 0, 0, 28, 0, 0, 0, 28];
        let h = parse_idx_images(&header, true).unwrap();
        assert_eq!((h.count, h.rows, h.cols), (60000, 28, 28));
    }

    #[test]
    fn idx_errors() {
        let good = idx_images(2, 2, 2, &[0; 8]);
        assert_eq!(parse_idx_images(&good, false).unwrap().pixels.len(), 8);
        assert!(matches!(
            parse_idx_images(&good[..20], false),
            Err(Error::TruncatedFile(_))
        ));
        assert!(matches!(
            parse_idx_images(&good[..10], false),
            Err(Error::TruncatedFile(_))
        ));
        let mut bad = good.clone();
        bad[3] = 1;
        assert!(matches!(
            parse_idx_images(&bad, false),
            Err(Error::BadMagic {
                expected: 0x803,
                found: 0x801
            })
        ));
        let labels = [0, 0, 8, 1, 0, 0, 0, 3, 1, 2];
        assert!(matches!(parse_idx_labels(&labels), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn load_idx_scales_and_transposes() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        std::fs::write(&img, idx_images(2, 1, 2, &[0, 255, 51, 102])).unwrap();
        std::fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 2, 7, 3]).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.x.shape(), (2, 2));
        assert_eq!(ds.x.col(0), vec![0.0, 1.0]);
        assert_eq!(ds.x.col(1), vec![0.2, 0.4]);
        assert_eq!(ds.labels.as_deref(), Some(&[7usize, 3][..]));
        assert_eq!(ds.y.shape(), (2, 10));

        std::fs::write(&lab, [0, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::CountMismatch(_))));
    }

    #[test]
    fn cifar_records() {
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(128u8, CIFAR_PIXELS));
        let two: Vec<u8> = rec.iter().chain(&rec).copied().collect();
        let (labels, px) = parse_cifar(&two, CifarVariant::Cifar10).unwrap();
        assert_eq!(labels, vec![3, 3]);
        assert_eq!(px.len(), 2 * CIFAR_PIXELS);
        assert!(matches!(
            parse_cifar(&two[..100], CifarVariant::Cifar10),
            Err(Error::TruncatedFile(_))
        ));
        let mut bad = rec.clone();
        bad[0] = 10;
        assert!(matches!(
            parse_cifar(&bad, CifarVariant::Cifar10),
            Err(Error::BadLabel { label: 10, .. })
        ));

        // CIFAR-100: coarse byte first, fine label second.
        let mut r100 = vec![1u8, 42];
        r100.extend(std::iter::repeat_n(0u8, CIFAR_PIXELS));
        assert_eq!(parse_cifar(&r100, CifarVariant::Cifar100).unwrap().0, vec![42]);
    }
}
