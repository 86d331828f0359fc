//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "HMNC"  u32 version
//! u32 len, spec text (canonical key=value lines)
//! u32 param count, then per parameter:
//!     u32 len, name (utf-8)   u32 rank   rank × u32 dims   f32 payload
//! u8 optimizer flag; if 1: u32 tensor count, then per tensor rank, dims, f32 payload
//! u32 epoch   u32 history len   history × f64
//! ```
//!
//! Parameters are written in model order and must match the layout the
//! spec builds, name by name and shape by shape.

use std::fs;
use std::path::Path;

use super::{build, Model, ModelSpec};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"HMNC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    pub epoch: u32,
    pub loss_history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    /// Optimizer accumulators in the optimizer's own order.
    pub optimizer: Option<Vec<Tensor>>,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint { model, optimizer: None, meta: TrainingMeta::default() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        let spec = self.model.spec().to_canonical();
        put_u32(&mut out, spec.len() as u32);
        out.extend_from_slice(spec.as_bytes());
        put_u32(&mut out, self.model.params().len() as u32);
        for p in self.model.params() {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            put_tensor(&mut out, &p.value);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(tensors) => {
                out.push(1);
                put_u32(&mut out, tensors.len() as u32);
                for t in tensors {
                    put_tensor(&mut out, t);
                }
            }
        }
        put_u32(&mut out, self.meta.epoch);
        put_u32(&mut out, self.meta.loss_history.len() as u32);
        for v in &self.meta.loss_history {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic).into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version, supported: VERSION }.into());
        }
        let spec_text = r.string()?;
        let spec = ModelSpec::parse_canonical(&spec_text)
            .map_err(|e| CheckpointError::Malformed(format!("embedded spec: {e}")))?;
        let mut model: Model = build(&spec, 0).map_err(|e| CheckpointError::Malformed(format!("embedded spec: {e}")))?;
        let count = r.u32()? as usize;
        if count != model.params().len() {
            return Err(CheckpointError::Malformed(format!(
                "{count} parameters stored, spec builds {}",
                model.params().len()
            ))
            .into());
        }
        for p in model.params_mut() {
            let name = r.string()?;
            if name != p.name {
                return Err(CheckpointError::ParamMismatch { expected: p.name.clone(), found: name }.into());
            }
            let dims = r.dims()?;
            let expected = p.value.shape().0.to_vec();
            if dims != expected {
                return Err(CheckpointError::ShapeMismatch { name, expected, found: dims }.into());
            }
            p.value = r.payload(p.value.shape())?;
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let n = r.u32()? as usize;
                let mut tensors = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let dims = r.dims()?;
                    tensors.push(r.payload(Shape::new(dims[0], dims[1], dims[2], dims[3]))?);
                }
                Some(tensors)
            }
            flag => return Err(CheckpointError::Malformed(format!("optimizer flag {flag}")).into()),
        };
        let epoch = r.u32()?;
        let len = r.u32()? as usize;
        let mut loss_history = Vec::with_capacity(len.min(1 << 16));
        for _ in 0..len {
            loss_history.push(f64::from_le_bytes(r.take(8)?.try_into().expect("eight bytes")));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
        }
        Ok(Checkpoint { model, optimizer, meta: TrainingMeta { epoch, loss_history } })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::new(model.clone()).save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    Ok(Checkpoint::load(path)?.model)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, 4);
    for d in t.shape().0 {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("non-utf-8 string".into()))
    }

    fn dims(&mut self) -> Result<Vec<usize>, CheckpointError> {
        let rank = self.u32()?;
        if rank != 4 {
            return Err(CheckpointError::Malformed(format!("rank {rank}, expected 4")));
        }
        (0..4).map(|_| self.u32().map(|d| d as usize)).collect()
    }

    fn payload(&mut self, shape: Shape) -> Result<Tensor, Error> {
        let n = shape.numel();
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
        Tensor::from_vec(shape, data)
    }
}
