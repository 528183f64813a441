//! Activation and target dumps produced by external models.
//!
//! `GRMH`: magic, u32 layer count, then per layer u32 d, u32 N and d·N f64
//! values in row-major order. `GRMY`: magic, u32 N, u32 C, then N·C f64
//! values. All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const ACTIVATIONS_MAGIC: &[u8; 4] = b"GRMH";
pub const TARGETS_MAGIC: &[u8; 4] = b"GRMY";

fn push_matrix(out: &mut Vec<u8>, m: &Matrix) {
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_activations(layers: &[Matrix]) -> Vec<u8> {
    let mut out = ACTIVATIONS_MAGIC.to_vec();
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for m in layers {
        push_matrix(&mut out, m);
    }
    out
}

pub fn encode_targets(y: &Matrix) -> Vec<u8> {
    let mut out = TARGETS_MAGIC.to_vec();
    push_matrix(&mut out, y);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::TruncatedFile(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::BadMagic {
                expected: u32::from_be_bytes(*want),
                found: u32::from_be_bytes(got.try_into().expect("4 bytes")),
            });
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn matrix(&mut self, what: &str) -> Result<Matrix> {
        let rows = self.u32(what)?;
        let cols = self.u32(what)?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::TruncatedFile(format!("{what}: {rows}×{cols} overflows")))?;
        let data = self
            .take(n, what)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::CountMismatch(format!(
                "{what}: {} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Per-layer d×N activation matrices.
pub fn decode_activations(bytes: &[u8]) -> Result<Vec<Matrix>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(ACTIVATIONS_MAGIC)?;
    let count = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for l in 0..count {
        let m = r.matrix(&format!("layer {l}"))?;
        if let Some(first) = layers.first() {
            let first: &Matrix = first;
            if first.cols() != m.cols() {
                return Err(Error::CountMismatch(format!(
                    "layer {l} has {} samples, layer 0 has {}",
                    m.cols(),
                    first.cols()
                )));
            }
        }
        layers.push(m);
    }
    r.finish("activations")?;
    Ok(layers)
}

/// N×C targets.
pub fn decode_targets(bytes: &[u8]) -> Result<Matrix> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(TARGETS_MAGIC)?;
    let y = r.matrix("targets")?;
    r.finish("targets")?;
    Ok(y)
}

pub fn read_activations(path: &Path) -> Result<Vec<Matrix>> {
    decode_activations(&fs::read(path)?)
}

pub fn read_targets(path: &Path) -> Result<Matrix> {
    decode_targets(&fs::read(path)?)
}

pub fn write_activations(path: &Path, layers: &[Matrix]) -> Result<()> {
    Ok(fs::write(path, encode_activations(layers))?)
}

pub fn write_targets(path: &Path, y: &Matrix) -> Result<()> {
    Ok(fs::write(path, encode_targets(y))?)
}
