//! Binary model format:
//!
//! ```text
//! "FPNN" | version u32 | input_channels u32 | input_length u32 | n_layers u32
//! per layer: kind u8 | flags u8 | ndims u8 | dims u32 * ndims [| rate f64 for dropout]
//! weights then bias of each parameterized layer, f64, in layer order
//! n_meta u32 | per entry: key_len u32 | key | value_len u32 | value
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::util;

use super::layers::{Conv1d, Dense, Layer, LayerKind, KERNEL_SIZE};
use super::model::CnnModel;

pub const MODEL_MAGIC: &[u8; 4] = b"FPNN";
pub const MODEL_VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_POOL: u8 = 1;
const KIND_DROPOUT: u8 = 2;
const KIND_DENSE: u8 = 3;
const KIND_RELU: u8 = 4;
const KIND_SOFTMAX: u8 = 5;
const FLAG_FROZEN: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn model_to_bytes(model: &CnnModel) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + model.param_count() * 8);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut out, model.input_channels())?;
    put_u32(&mut out, model.input_length())?;
    put_u32(&mut out, model.layers().len())?;
    for l in model.layers() {
        let (kind, dims): (u8, Vec<usize>) = match &l.kind {
            LayerKind::Conv1d(c) => (KIND_CONV, vec![c.in_channels, c.out_channels, KERNEL_SIZE]),
            LayerKind::MaxPool1d => (KIND_POOL, vec![]),
            LayerKind::Dropout { .. } => (KIND_DROPOUT, vec![]),
            LayerKind::Dense(d) => (KIND_DENSE, vec![d.inputs, d.units]),
            LayerKind::Relu => (KIND_RELU, vec![]),
            LayerKind::Softmax => (KIND_SOFTMAX, vec![]),
        };
        out.push(kind);
        out.push(if l.frozen { FLAG_FROZEN } else { 0 });
        out.push(dims.len() as u8);
        for d in dims {
            put_u32(&mut out, d)?;
        }
        if let LayerKind::Dropout { rate } = l.kind {
            out.extend_from_slice(&rate.to_le_bytes());
        }
    }
    for l in model.layers() {
        if let Some((w, b)) = l.params() {
            for v in w.iter().chain(b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    put_u32(&mut out, model.meta().len())?;
    for (k, v) in model.meta() {
        put_u32(&mut out, k.len())?;
        out.extend_from_slice(k.as_bytes());
        put_u32(&mut out, v.len())?;
        out.extend_from_slice(v.as_bytes());
    }
    Ok(out)
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
            .ok_or_else(|| Error::Format(format!("model file truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("parameter count overflows".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("metadata is not UTF-8".into()))
    }
}

pub fn model_from_bytes(buf: &[u8]) -> Result<CnnModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4).ok() != Some(MODEL_MAGIC.as_slice()) {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model format version {version}, expected {MODEL_VERSION}"
        )));
    }
    let input_channels = r.u32()?;
    let input_length = r.u32()?;
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for i in 0..n_layers {
        let kind = r.u8()?;
        let flags = r.u8()?;
        let ndims = r.u8()? as usize;
        let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let want = match kind {
            KIND_CONV => 3,
            KIND_DENSE => 2,
            KIND_POOL | KIND_DROPOUT | KIND_RELU | KIND_SOFTMAX => 0,
            other => return Err(Error::Format(format!("layer {i}: unknown kind {other}"))),
        };
        if ndims != want {
            return Err(Error::Format(format!("layer {i}: expected {want} dims, got {ndims}")));
        }
        let kind = match kind {
            KIND_CONV => {
                if dims[2] != KERNEL_SIZE {
                    return Err(Error::Format(format!("layer {i}: kernel size {} unsupported", dims[2])));
                }
                LayerKind::Conv1d(Conv1d::zeros(dims[0], dims[1]))
            }
            KIND_DENSE => LayerKind::Dense(Dense::zeros(dims[0], dims[1])),
            KIND_POOL => LayerKind::MaxPool1d,
            KIND_DROPOUT => LayerKind::Dropout { rate: r.f64()? },
            KIND_RELU => LayerKind::Relu,
            _ => LayerKind::Softmax,
        };
        layers.push(Layer {
            kind,
            frozen: flags & FLAG_FROZEN != 0,
        });
    }
    for l in &mut layers {
        if let Some((w, b)) = l.params_mut() {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&r.f64s(nw)?);
            b.copy_from_slice(&r.f64s(nb)?);
        }
    }
    let n_meta = r.u32()?;
    let mut meta = std::collections::BTreeMap::new();
    for _ in 0..n_meta {
        let k = r.string()?;
        let v = r.string()?;
        meta.insert(k, v);
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes after model", buf.len() - r.pos)));
    }
    let mut model = CnnModel::from_layers(input_channels, input_length, layers)
        .map_err(|e| Error::Format(format!("inconsistent model: {e}")))?;
    *model.meta_mut() = meta;
    Ok(model)
}

pub fn save_model(model: &CnnModel, path: &Path) -> Result<()> {
    util::write_atomic(path, &model_to_bytes(model)?)
}

pub fn load_model(path: &Path) -> Result<CnnModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}
