//! The MIV1 named-tensor container.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! magic      4 bytes   "MIV1" (4D 49 56 31)
//! count      u32
//! per tensor:
//!   name_len u16, name bytes (ASCII, at most 64)
//!   rank     u8
//!   dims     rank x u32
//!   payload  prod(dims) x f32, row-major
//! ```

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::error::Result;
use crate::tensorcore::tensor::checked_numel;
use crate::tensorcore::{Real, Tensor};

pub const MAGIC: [u8; 4] = *b"MIV1";
pub const MAX_NAME_LEN: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected MIV1")]
    BadMagic,
    #[error("truncated file: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("shape overflow in tensor {0:?}")]
    ShapeOverflow(String),
    #[error("invalid tensor name {0:?}")]
    InvalidName(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("non-finite value in tensor {0:?}")]
    NonFinite(String),
    #[error("{0} trailing bytes after last tensor")]
    TrailingBytes(usize),
}

fn validate_name(name: &str) -> Result<(), FormatError> {
    if name.is_empty() || name.len() > MAX_NAME_LEN || !name.is_ascii() {
        return Err(FormatError::InvalidName(name.to_string()));
    }
    Ok(())
}

pub fn encode<F: Real>(tensors: &[(&str, &Tensor<F>)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    let count = u32::try_from(tensors.len())
        .map_err(|_| FormatError::ShapeOverflow("<count>".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        validate_name(name)?;
        if !seen.insert(*name) {
            return Err(FormatError::DuplicateName(name.to_string()).into());
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank =
            u8::try_from(t.rank()).map_err(|_| FormatError::ShapeOverflow(name.to_string()))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| FormatError::ShapeOverflow(name.to_string()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode<F: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<F>)>, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            offset: 0,
            needed: 4,
        });
    }
    if cur.take(4)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let count = cur.u32()? as usize;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = String::from_utf8_lossy(cur.take(len)?).into_owned();
        validate_name(&name)?;
        if !seen.insert(name.clone()) {
            return Err(FormatError::DuplicateName(name));
        }
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel = checked_numel(&shape)
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| FormatError::ShapeOverflow(name.clone()))?;
        let payload = cur.take(numel * 4)?;
        let data: Vec<F> = payload
            .chunks_exact(4)
            .map(|c| F::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let t = Tensor::new(shape, data).map_err(|_| FormatError::NonFinite(name.clone()))?;
        out.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(out)
}

pub fn save_tensors<F: Real>(path: impl AsRef<Path>, tensors: &[(&str, &Tensor<F>)]) -> Result<()> {
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_tensors<F: Real>(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<F>)>> {
    let bytes = std::fs::read(path)?;
    Ok(decode(&bytes)?)
}
