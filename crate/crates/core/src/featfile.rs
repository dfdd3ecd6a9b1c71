//! Binary feature container.
//!
//! Layout (little endian): `b"DFLFEAT\0"`, `u32` version, `u32` bands,
//! `u32` frames, `u8` domain (0 log, 1 linear), 32-byte SHA-256 of the
//! producing checkpoint (zeros when none), then `bands * frames` `f32`
//! values in row-major order.

use std::path::Path;

use crate::audio::{Domain, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"DFLFEAT\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4 + 1 + 32;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub features: FeatureMatrix<f32>,
    pub provenance: [u8; 32],
}

impl FeatureFile {
    pub fn new<S: Scalar>(features: &FeatureMatrix<S>, provenance: Option<[u8; 32]>) -> Self {
        FeatureFile {
            features: features.cast(),
            provenance: provenance.unwrap_or([0; 32]),
        }
    }

    pub fn provenance_hex(&self) -> String {
        hex::encode(self.provenance)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let f = &self.features;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * f.values().len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(f.n_bands() as u32).to_le_bytes());
        out.extend_from_slice(&(f.n_frames() as u32).to_le_bytes());
        out.push(match f.domain() {
            Domain::Log => 0,
            Domain::Linear => 1,
        });
        out.extend_from_slice(&self.provenance);
        for v in f.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("feature file: {m}"));
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(bad("bad magic or truncated header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        if u32_at(8) != VERSION {
            return Err(bad(format!("unsupported version {}", u32_at(8))));
        }
        let (f, t) = (u32_at(12) as usize, u32_at(16) as usize);
        let domain = match bytes[20] {
            0 => Domain::Log,
            1 => Domain::Linear,
            d => return Err(bad(format!("unknown domain tag {d}"))),
        };
        let mut provenance = [0; 32];
        provenance.copy_from_slice(&bytes[21..53]);
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * f * t {
            return Err(bad(format!("{f} x {t} matrix needs {} bytes, found {}", 4 * f * t, body.len())));
        }
        let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(FeatureFile {
            features: FeatureMatrix::new(f, t, values, domain)?,
            provenance,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
