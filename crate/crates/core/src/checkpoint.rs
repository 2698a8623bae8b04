//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "DSIECKPT"
//! version u32      1
//! config  u32 len + UTF-8 `key = value` lines
//! hash    u32 len + UTF-8 hex catalog hash
//! items   u32      catalog size
//! count   u32      number of tensors
//! tensor  u16 name len + UTF-8 name, u32 ndim, u32 dims..., f32 data (row-major)
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::config::TrainConfig;
use crate::error::{DsieError, Result};
use crate::params::ModelParams;

pub const MAGIC: &[u8; 8] = b"DSIECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub catalog_hash: String,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        put_str(&mut out, &self.catalog_hash);
        out.extend_from_slice(&(self.params.dims().items as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (p, t) in self.params.iter() {
            let name = p.name();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
            for &v in t.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DsieError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DsieError::Checkpoint(format!("unsupported version {version}")));
        }
        let config = TrainConfig::from_text(&r.string_u32()?)?;
        let catalog_hash = r.string_u32()?;
        let items = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| DsieError::Checkpoint("tensor name is not UTF-8".into()))?;
            let ndim = r.u32()?;
            if ndim != 2 {
                return Err(DsieError::Checkpoint(format!(
                    "tensor {name}: expected 2 dims, found {ndim}"
                )));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 4)?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = Array2::from_shape_vec((rows, cols), data).expect("length checked");
            named.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(DsieError::Checkpoint("trailing bytes".into()));
        }
        let params = ModelParams::from_tensors(config.dims(items), named)?;
        Ok(Checkpoint {
            config,
            catalog_hash,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| DsieError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| DsieError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses to pair this checkpoint with a different catalog.
    pub fn check_catalog(&self, corpus_hash: &str) -> Result<()> {
        if self.catalog_hash != corpus_hash {
            return Err(DsieError::CatalogMismatch {
                checkpoint: self.catalog_hash.clone(),
                corpus: corpus_hash.to_string(),
            });
        }
        Ok(())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
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
            .ok_or_else(|| DsieError::Checkpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string_u32(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| DsieError::Checkpoint("string is not UTF-8".into()))
    }
}
