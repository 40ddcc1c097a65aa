//! Named parameter storage and the binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! `b"VFCK"`, version `u32`, meta length `u32`, meta JSON bytes,
//! tensor count `u32`, then per tensor: name length `u16`, UTF-8 name,
//! rows `u32`, cols `u32`; followed by every tensor's values as `f32`
//! in table order.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on any single allocation requested by a checkpoint header.
const MAX_CHECKPOINT_VALUES: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Rounds every value to the nearest `f32` so checkpoints are lossless.
    pub fn quantize(&mut self) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

pub fn encode_checkpoint(meta: &str, params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_values() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.names.iter().zip(&params.tensors) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
    }
    for t in &params.tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

/// Parses a checkpoint into its meta string and parameters.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(String, ParamStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| Error::Checkpoint("meta is not UTF-8".into()))?
        .to_string();
    let count = r.u32()? as usize;
    let mut shapes = Vec::new();
    let mut total = 0usize;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor shape overflows".into()))?;
        total = total
            .checked_add(n)
            .filter(|&t| t <= MAX_CHECKPOINT_VALUES)
            .ok_or_else(|| Error::Checkpoint("checkpoint too large".into()))?;
        shapes.push((name, rows, cols));
    }
    if bytes.len() - r.pos != total * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} value bytes, found {}",
            total * 4,
            bytes.len() - r.pos
        )));
    }
    let mut params = ParamStore::new();
    for (name, rows, cols) in shapes {
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect();
        params.add(name, Tensor { rows, cols, data });
    }
    Ok((meta, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.add("w", Tensor::from_vec(2, 2, vec![0.1, -2.5, 3.0e-8, 7.0]).unwrap());
        p.add("b", Tensor::from_vec(1, 3, vec![1.0, 0.0, -0.0]).unwrap());
        p.quantize();
        p
    }

    #[test]
    fn round_trip_is_exact() {
        let p = store();
        let bytes = encode_checkpoint("{\"k\":1}", &p);
        let (meta, q) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        assert_eq!(p, q);
        assert_eq!(encode_checkpoint(&meta, &q), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode_checkpoint("{}", &store());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_checkpoint(&magic).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(decode_checkpoint(&version).is_err());
    }
}
