//! Versioned binary container for network parameters and optimizer state.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size   field
//! 0       8      magic  b"DFLCKPT\0"
//! 8       4      u32 format version (2)
//! 12      1      u8 value width W in bytes (4: f32, 8: f64)
//! 13      4      u32 header length H
//! 17      H      UTF-8 JSON header (CheckpointHeader)
//! 17+H    4      u32 entry count E
//!         E x    entry:
//!                  u16  name length L, then L bytes UTF-8 name
//!                  u8   flags (bit 0: trainable, bit 1: optimizer moment)
//!                  u8   rank R, then R x u32 dims
//!                  prod(dims) x W-byte float values, row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::optim::{OptimizerConfig, OptimizerState};
use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"DFLCKPT\0";
pub const VERSION: u32 = 2;

const FLAG_TRAINABLE: u8 = 1;
const FLAG_MOMENT: u8 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: OptimizerConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Architecture family, e.g. `"can"`, `"edn"`, `"aux"`.
    pub kind: String,
    /// Architecture configuration, as written by the network builder.
    pub config: serde_json::Value,
    /// Names of the activation taps exposed by the network, in order.
    #[serde(default)]
    pub taps: Vec<String>,
    #[serde(default)]
    pub optimizer: Option<OptimizerMeta>,
    /// Free-form run metadata (epoch, losses, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub trainable: bool,
    pub moment: bool,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Bytes per stored value: 4 or 8.
    pub value_width: u8,
    pub header: CheckpointHeader,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store<S: Scalar>(
        mut header: CheckpointHeader,
        store: &ParamStore<S>,
        optimizer: Option<&OptimizerState<S>>,
    ) -> Self {
        let mut entries: Vec<CheckpointEntry> = store
            .iter()
            .map(|(_, p)| CheckpointEntry {
                name: p.name.clone(),
                trainable: p.trainable,
                moment: false,
                shape: p.value.shape().to_vec(),
                values: p.value.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        if let Some(opt) = optimizer {
            header.optimizer = Some(OptimizerMeta {
                config: opt.config,
                step: opt.step,
            });
            entries.extend(opt.named_moments(store).into_iter().map(|(name, t)| CheckpointEntry {
                name,
                trainable: false,
                moment: true,
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.as_f64()).collect(),
            }));
        }
        Checkpoint { value_width: if S::BITS > 32 { 8 } else { 4 }, header, entries }
    }

    fn tensor<S: Scalar>(e: &CheckpointEntry) -> Tensor<S> {
        Tensor::new(e.shape.clone(), e.values.iter().map(|&v| S::lit(v)).collect())
            .expect("entry shape validated on read")
    }

    /// Copy stored values into `store` by name. Every store entry must be
    /// present with a matching shape.
    pub fn load_into<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let e = self
                .entries
                .iter()
                .find(|e| !e.moment && e.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
            let p = store.entry_mut(id);
            if e.shape != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "entry {name} has shape {:?}, network expects {:?}",
                    e.shape,
                    p.value.shape()
                )));
            }
            p.value = Self::tensor(e);
        }
        Ok(())
    }

    pub fn optimizer_state<S: Scalar>(&self, store: &ParamStore<S>) -> Result<Option<OptimizerState<S>>> {
        let Some(meta) = &self.header.optimizer else {
            return Ok(None);
        };
        let mut state = OptimizerState::new(meta.config, store);
        state.step = meta.step;
        state.restore_moments(store, |name| {
            self.entries.iter().find(|e| e.moment && e.name == name).map(Self::tensor)
        })?;
        Ok(Some(state))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.value_width);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            let flags = if e.trainable { FLAG_TRAINABLE } else { 0 } | if e.moment { FLAG_MOMENT } else { 0 };
            out.push(flags);
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.values {
                if self.value_width == 8 {
                    out.extend_from_slice(&v.to_le_bytes());
                } else {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let value_width = r.take(1)?[0];
        if value_width != 4 && value_width != 8 {
            return Err(Error::Checkpoint(format!("unsupported value width {value_width}")));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let flags = r.take(1)?[0];
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let w = value_width as usize;
            let values = r
                .take(n * w)?
                .chunks_exact(w)
                .map(|c| match w {
                    8 => f64::from_le_bytes(c.try_into().unwrap()),
                    _ => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                })
                .collect();
            entries.push(CheckpointEntry {
                name,
                trainable: flags & FLAG_TRAINABLE != 0,
                moment: flags & FLAG_MOMENT != 0,
                shape,
                values,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last entry".into()));
        }
        Ok(Checkpoint { value_width, header, entries })
    }

    /// Write atomically (temporary file then rename).
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
