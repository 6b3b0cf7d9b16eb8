//! Versioned parameter archive.
//!
//! ```text
//! "FGSCKPT\0" | version u32 | config JSON length u32 | config JSON
//! tensor count u32, then per tensor:
//!   name length u16 | name (UTF-8) | dims 4×u32 | f32 data
//! ```
//!
//! Names follow `module.stage.kind`, for example `g_b.conv0.weight` or
//! `entropy.prior_s.matrix2`. The model hash carried by every bitstream is
//! the first 8 bytes of the SHA-256 of the whole archive.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::DeepFgs;

const MAGIC: &[u8; 8] = b"FGSCKPT\0";
const VERSION: u32 = 1;

pub fn to_bytes(model: &DeepFgs<f32>) -> Vec<u8> {
    let config = serde_json::to_vec(&model.cfg).expect("config serializes");
    let params = model.named_params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in &params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn hash_bytes(archive: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(archive);
    digest[..8].try_into().expect("digest is 32 bytes")
}

pub fn model_hash(model: &DeepFgs<f32>) -> [u8; 8] {
    hash_bytes(&to_bytes(model))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| {
            Error::format("checkpoint", format!("truncated at byte {}", self.pos))
        })?;
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Rebuilds a model and returns it with its hash.
pub fn from_bytes(bytes: &[u8]) -> Result<(DeepFgs<f32>, [u8; 8])> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format("checkpoint", "missing magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            "checkpoint",
            format!("unsupported version {version}"),
        ));
    }
    let len = r.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(len)?)?;
    let count = r.u32()? as usize;
    let mut values = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("checkpoint", "parameter name is not UTF-8"))?
            .to_string();
        let shape: Vec<usize> = (0..4)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        values.insert(name, (shape, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes"));
    }
    let mut model = DeepFgs::new(cfg)?;
    model.load_params(&values)?;
    Ok((model, hash_bytes(bytes)))
}

pub fn save(model: &DeepFgs<f32>, path: &Path) -> Result<[u8; 8]> {
    let bytes = to_bytes(model);
    std::fs::write(path, &bytes)?;
    Ok(hash_bytes(&bytes))
}

pub fn load(path: &Path) -> Result<(DeepFgs<f32>, [u8; 8])> {
    from_bytes(&std::fs::read(path)?)
}
