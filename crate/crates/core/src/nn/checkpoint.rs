//! `GRMW` weight checkpoints.
//!
//! Layout (little-endian): magic `GRMW`, u16 version, u16 layer count, then per
//! layer u32 rows, u32 cols, u8 activation tag, u8 bias flag, followed by the
//! row-major f64 weights and the bias when flagged.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::activation::Activation;
use crate::nn::network::{Layer, Network};

pub const MAGIC: &[u8; 4] = b"GRMW";
pub const VERSION: u16 = 1;

pub fn write_network(net: &Network, out: &mut impl Write) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(net.depth() as u16).to_le_bytes())?;
    for layer in net.layers() {
        out.write_all(&(layer.weight.rows() as u32).to_le_bytes())?;
        out.write_all(&(layer.weight.cols() as u32).to_le_bytes())?;
        out.write_all(&[layer.activation.tag(), layer.bias.is_some() as u8])?;
        for v in layer.weight.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
        if let Some(b) = &layer.bias {
            for v in b {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    write_network(net, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::TruncatedFile(format!("checkpoint ends inside {what}")));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::TruncatedFile(what.into()))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let mut cur = Cursor { bytes, at: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
        });
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!("checkpoint version {version}")));
    }
    let count = cur.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for l in 0..count {
        let rows = cur.u32("layer header")? as usize;
        let cols = cur.u32("layer header")? as usize;
        let flags = cur.take(2, "layer header")?;
        let activation = Activation::from_tag(flags[0])?;
        let has_bias = match flags[1] {
            0 => false,
            1 => true,
            f => return Err(Error::UnsupportedFormat(format!("layer {l} bias flag {f}"))),
        };
        let weight = Matrix::from_vec(rows, cols, cur.f64s(rows * cols, "weights")?)?;
        let bias = if has_bias { Some(cur.f64s(rows, "bias")?) } else { None };
        layers.push(Layer::new(weight, bias, activation)?);
    }
    if cur.at != bytes.len() {
        return Err(Error::CountMismatch(format!(
            "{} trailing bytes after {count} layers",
            bytes.len() - cur.at
        )));
    }
    Network::new(layers)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_network(net))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    decode_network(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{InitScheme, NetworkSpec};

    fn net() -> Network {
        Network::init(
            &NetworkSpec {
                dims: vec![3, 4, 2],
                hidden: Activation::Gelu,
                readout: Activation::Sigmoid,
                bias: true,
                init: InitScheme::He,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let bytes = encode_network(&n);
        assert_eq!(&bytes[..4], b"GRMW");
        assert_eq!(&bytes[4..8], &[1, 0, 2, 0]);
        assert_eq!(decode_network(&bytes).unwrap(), n);
    }

    #[test]
    fn header_size_matches_layout() {
        let n = net();
        let expected = 8 + 2 * 10 + 8 * (12 + 4 + 8 + 2);
        assert_eq!(encode_network(&n).len(), expected);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode_network(&net());
        assert!(matches!(
            decode_network(&bytes[..bytes.len() - 3]),
            Err(Error::TruncatedFile(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_network(&bad), Err(Error::BadMagic { .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_network(&extra), Err(Error::CountMismatch(_))));
    }
}
