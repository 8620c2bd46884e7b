//! Binary checkpoint format.
//!
//! ```text
//! "MATCKPT1" | u32 version | u32 blob_len | blob (key=value lines)
//! u32 tensor_count | per tensor: u16 name_len, name, u8 ndim, ndim x u64 dims,
//!                    f32 payload (row-major)
//! u64 step
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::{skeleton, Model, ModelConfig};
use crate::data::{BOS_ID, EOS_ID, PAD_ID, UNK_ID};
use crate::error::{CheckpointError, MatError, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MATCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

const INIT_SCHEME: &str = "xavier_uniform";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// A decoded checkpoint: configuration, named parameters and training step.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, step: u64) -> Self {
        let mut tensors = Vec::new();
        model.params().visit(&mut |name, t| {
            tensors.push(NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            })
        });
        Self {
            config: model.config().clone(),
            tensors,
            step,
        }
    }

    /// Rebuilds the model, checking that every expected parameter appears
    /// exactly once with the expected shape.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut params = skeleton::<T>(&self.config);
        let mut expected = Vec::new();
        params.visit(&mut |name, t| expected.push((name, t.shape().to_vec())));
        if expected.len() != self.tensors.len() {
            return Err(CheckpointError::ParamTable(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            ))
            .into());
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name {
                return Err(CheckpointError::ParamTable(format!(
                    "expected `{name}`, found `{}`",
                    t.name
                ))
                .into());
            }
            if *shape != t.shape {
                return Err(CheckpointError::ParamTable(format!(
                    "`{name}` has shape {:?}, config implies {shape:?}",
                    t.shape
                ))
                .into());
            }
        }
        let mut it = self.tensors.iter();
        params.visit_mut(&mut |_, p| {
            let t = it.next().expect("length checked");
            *p = Tensor::new(t.shape.clone(), t.data.iter().map(|&v| T::from_f32(v).unwrap_or_else(T::nan)).collect())
                .expect("shape checked");
        });
        Model::from_params(self.config.clone(), params)
    }

    fn config_blob(&self) -> String {
        let mut s = self.config.to_kv_string();
        for (k, v) in [
            ("pad_id", PAD_ID),
            ("bos_id", BOS_ID),
            ("eos_id", EOS_ID),
            ("unk_id", UNK_ID),
        ] {
            s.push_str(&format!("{k}={v}\n"));
        }
        s.push_str(&format!("init={INIT_SCHEME}\n"));
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let blob = self.config_blob();
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic.to_vec()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let blob_len = r.u32("config length")? as usize;
        let blob = std::str::from_utf8(r.take(blob_len, "config blob")?)
            .map_err(|e| CheckpointError::ConfigBlob(e.to_string()))?;
        let config = parse_blob(blob)?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|e| CheckpointError::ParamTable(e.to_string()))?
                .to_string();
            let ndim = r.u8("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64("tensor dims")? as usize);
            }
            let expected = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0 && ndim > 0)
                .ok_or_else(|| CheckpointError::PayloadLength {
                    name: name.clone(),
                    shape: shape.clone(),
                    expected: 0,
                    actual: 0,
                })?;
            let raw = r.take(
                expected.checked_mul(4).ok_or(CheckpointError::Truncated("tensor payload"))?,
                "tensor payload",
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        let step = r.u64("step")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self {
            config,
            tensors,
            step,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn parse_blob(blob: &str) -> Result<ModelConfig, CheckpointError> {
    let mut cfg = ModelConfig::default();
    for line in blob.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::ConfigBlob(format!("line `{line}` is not key=value")))?;
        let known = cfg.set(k, v).map_err(|e| CheckpointError::ConfigBlob(e.to_string()))?;
        if known {
            continue;
        }
        let expected = match k {
            "pad_id" => PAD_ID.to_string(),
            "bos_id" => BOS_ID.to_string(),
            "eos_id" => EOS_ID.to_string(),
            "unk_id" => UNK_ID.to_string(),
            "init" => INIT_SCHEME.to_string(),
            _ => return Err(CheckpointError::ConfigBlob(format!("unknown key `{k}`"))),
        };
        if v != expected {
            return Err(CheckpointError::ConfigBlob(format!("{k}={v}, this build uses {expected}")));
        }
    }
    cfg.validate().map_err(|e| CheckpointError::ConfigBlob(e.to_string()))?;
    Ok(cfg)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, step: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, Checkpoint::from_model(model, step).to_bytes()).map_err(|e| MatError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| MatError::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}
