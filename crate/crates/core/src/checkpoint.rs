//! Versioned binary checkpoints.
//!
//! Layout, all integers `u32` little-endian:
//! magic `TMMC1`, version, config-echo length and UTF-8 bytes, tensor count,
//! then per tensor: name length, name bytes, ndim, dims, and `f32` LE values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Parameters;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TMMC1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_echo: String,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_parameters(config_echo: impl Into<String>, params: &Parameters) -> Self {
        let mut tensors = Vec::new();
        params.visit(&mut |name, shape, values| {
            tensors.push(Tensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: values.iter().map(|&v| v as f32 as f64).collect(),
            })
        });
        Self {
            version: CHECKPOINT_VERSION,
            config_echo: config_echo.into(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let push_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        push_u32(&mut out, self.version as usize);
        push_u32(&mut out, self.config_echo.len());
        out.extend_from_slice(self.config_echo.as_bytes());
        push_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            push_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            push_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                push_u32(&mut out, d);
            }
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "incompatible version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let len = r.u32()? as usize;
        let config_echo = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config echo is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            version,
            config_echo,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies the stored values into `params`; names and shapes must match exactly.
    pub fn restore(&self, params: &mut Parameters) -> Result<()> {
        let mut expected = Vec::new();
        params.visit(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match model tensor `{name}` {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        let mut idx = 0;
        params.visit_mut(&mut |_, values| {
            values.copy_from_slice(&self.tensors[idx].data);
            idx += 1;
        });
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
