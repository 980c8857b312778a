//! Binary checkpoint format.
//!
//! ```text
//! "LFCK" | u32 version | u32 len | metadata JSON (len bytes, UTF-8)
//! u32 tensor count, then per tensor:
//!   u32 name len | name | u32 rank | rank x u32 dims | f32 LE payload
//! ```
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::nn::model::{build_backbone, Model, TrainingMeta};
use crate::nn::preset::BackbonePreset;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    preset: BackbonePreset,
    seed: u64,
    projection_head: bool,
    training: TrainingMeta,
}

fn running_names(slot: usize) -> [String; 2] {
    [format!("bn{slot}.running_mean"), format!("bn{slot}.running_var")]
}

pub fn encode_checkpoint<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let meta = Metadata {
        preset: *model.preset(),
        seed: model.seed(),
        projection_head: model.has_projection_head(),
        training: model.meta.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut tensors: Vec<(String, Vec<usize>, Vec<T>)> = model
        .param_names()
        .iter()
        .zip(model.params())
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().to_vec()))
        .collect();
    for (slot, (mean, var)) in model.running_stats().iter().enumerate() {
        let [mn, vn] = running_names(slot);
        tensors.push((mn, vec![mean.len()], mean.clone()));
        tensors.push((vn, vec![var.len()], var.clone()));
    }

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, tensors.len())?;
    for (name, dims, data) in tensors {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, dims.len())?;
        for d in dims {
            put_u32(&mut out, d)?;
        }
        for v in data {
            let v = v.to_f32().expect("float converts to f32");
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Format("missing LFCK magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible {
            what: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = cur.u32()? as usize;
    let meta: Metadata =
        serde_json::from_slice(cur.take(len)?).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    let count = cur.u32()? as usize;
    let mut tensors = std::collections::BTreeMap::new();
    for _ in 0..count {
        let nlen = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(nlen)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_owned();
        let rank = cur.u32()? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
        let payload = cur.take(n.checked_mul(4).ok_or_else(|| Error::Format("overflow".into()))?)?;
        let data: Vec<T> = payload
            .chunks_exact(4)
            .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().expect("4 bytes"))).expect("f32 converts"))
            .collect();
        if tensors.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }

    let mut model =
        build_backbone::<T>(&meta.preset, meta.seed).map_err(|e| Error::Format(format!("checkpoint preset: {e}")))?;
    if !meta.projection_head {
        model.drop_projection_head();
    }
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
        let (dims, data) = tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
        if dims != shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {dims:?}, model expects {shape:?}"
            )));
        }
        Ok(data)
    };
    let names = model.param_names().to_vec();
    let mut params = Vec::with_capacity(names.len());
    for (name, p) in names.iter().zip(model.params()) {
        let data = take(name, p.shape())?;
        params.push(Tensor::new(p.shape().to_vec(), data)?.with_requires_grad(true));
    }
    let mut running = Vec::new();
    for (slot, (mean, _)) in model.running_stats().iter().enumerate() {
        let [mn, vn] = running_names(slot);
        running.push((take(&mn, &[mean.len()])?, take(&vn, &[mean.len()])?));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor `{extra}`")));
    }
    model.params_mut().clone_from_slice(&params);
    model.running_stats_mut().clone_from_slice(&running);
    model.meta = meta.training;
    Ok(model)
}

/// Writes the checkpoint atomically (temp file, then rename).
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model)?;
    let tmp = path.with_extension("lfck.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::at_path(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::at_path(path, e))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::at_path(path, e))?;
    decode_checkpoint(&bytes)
}
