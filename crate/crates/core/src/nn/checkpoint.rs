//! Model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GBNN"            magic
//! u32               format version (1)
//! u32               architecture tag (0 = MiniCNN, 1 = MiniResNet8)
//! u32 u32 u32       in_channels, n_classes, input_side
//! u32               tensor count T
//! T x { u32 rank, rank x u32 dims }
//! f32 payload       every tensor in header order, row-major
//! ```
//!
//! Tensors are listed in [`ModelGraph::state_tensors`] order, so BatchNorm
//! running statistics travel with the parameters.

use std::fs;
use std::path::Path;

use super::model::{build_model, Arch, ModelGraph};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GBNN";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Serializes a model built by [`build_model`].
pub fn encode_checkpoint(model: &ModelGraph, input_side: usize) -> Result<Vec<u8>> {
    let arch = model
        .arch
        .ok_or_else(|| Error::Format("only reference architectures can be checkpointed".into()))?;
    let tensors = model.state_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        arch.tag(),
        model.in_channels as u32,
        model.n_classes as u32,
        input_side as u32,
        tensors.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in &tensors {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in &tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Rebuilds the architecture named in the header and loads every tensor.
/// Returns the model and the input side it was built for.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelGraph, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a GBNN checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let arch = Arch::from_tag(r.u32()?)?;
    let in_channels = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    let input_side = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        shapes.push(dims);
    }
    let mut model = build_model(arch, in_channels, n_classes, input_side, 0)?;
    if model.state_tensors().len() != count {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, architecture needs {}",
            model.state_tensors().len()
        )));
    }
    let mut shapes = shapes.into_iter();
    model.for_each_state_mut(|t| {
        let shape = shapes.next().expect("count checked");
        if shape != t.shape() {
            return Err(Error::Format(format!(
                "tensor shape {shape:?} does not match {:?}",
                t.shape()
            )));
        }
        for v in t.data_mut() {
            *v = f64::from(r.f32()?);
        }
        Ok(())
    })?;
    if r.pos != bytes.len() {
        return Err(Error::Format(
            "trailing bytes after checkpoint payload".into(),
        ));
    }
    Ok((model, input_side))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &ModelGraph,
    input_side: usize,
) -> Result<()> {
    fs::write(path, encode_checkpoint(model, input_side)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelGraph, usize)> {
    decode_checkpoint(&fs::read(path)?)
}
