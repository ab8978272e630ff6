//! Tensor interchange files.
//!
//! ```text
//! "GBTF"        magic
//! u32           version (1)
//! u32           rank R
//! R x u64       dims
//! f32 payload   row-major, little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"GBTF";
pub const TENSOR_VERSION: u32 = 1;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let short = || Error::Format("tensor file truncated".into());
    if bytes.len() < 12 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Format("not a GBTF tensor file".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!(
            "unsupported tensor version {version}"
        )));
    }
    let rank = word(8) as usize;
    let dims_end = 12 + 8 * rank;
    let dims_bytes = bytes.get(12..dims_end).ok_or_else(short)?;
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for chunk in dims_bytes.chunks_exact(8) {
        let d = usize::try_from(u64::from_le_bytes(chunk.try_into().unwrap()))
            .map_err(|_| Error::Format("dimension exceeds address space".into()))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::Format("element count overflows".into()))?;
        shape.push(d);
    }
    let payload = &bytes[dims_end..];
    if payload.len() != 4 * count {
        return Err(Error::TruncatedData {
            expected: 4 * count,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}
