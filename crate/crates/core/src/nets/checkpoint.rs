//! Flat binary archive of named tensors plus a JSON metadata record.
//!
//! Layout, all integers little-endian:
//! `magic[8] | meta_len:u64 | meta json | count:u64 | count × tensor`, where
//! a tensor is `name_len:u32 | name | ndim:u32 | dims:u64×ndim | f64×numel`.

use super::ParamStore;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AETCKPT1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Input(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::with_capacity(64 + meta.len() + 8 * self.tensors.numel());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "not a checkpoint (bad magic)"));
        }
        let meta_len = r.len_u64("metadata length")?;
        let meta_at = r.pos;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::format(meta_at as u64, format!("metadata: {e}")))?;
        let count = r.len_u64("tensor count")?;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let at = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::format(at as u64, "tensor name is not UTF-8"))?
                .to_owned();
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.len_u64("dimension")?);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format(at as u64, format!("dimensions {dims:?} overflow")))?;
            let raw = r.take(numel.saturating_mul(8), "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(name, Tensor::new(&dims, data)?).map_err(|e| Error::format(at as u64, e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after last tensor"));
        }
        Ok(Self { meta, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("file ends inside {what} starting at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "u32 field")?.try_into().expect("4 bytes")))
    }

    fn len_u64(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::format(at as u64, format!("{what} {v} too large")))
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
