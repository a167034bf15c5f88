//! Binary checkpoint, little-endian:
//!
//! ```text
//! "NAMP" | u32 version | u32 config_len | config JSON
//! repeated: u32 name_len | name | u32 rank | u32 dims[rank] | f32 data
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{AmpModel, ModelConfig};
use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"NAMP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    rng_seed: u64,
}

pub fn encode_model<T: Real>(model: &AmpModel<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let header = serde_json::to_vec(&Header { model: model.config.clone(), rng_seed: model.rng_seed })?;
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (name, m) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for v in &m.data {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    Ok(out)
}

/// Values are stored as f32; an f64 model round-trips only to f32 precision.
pub fn save_model<T: Real>(model: &AmpModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<AmpModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let len = r.u32("config length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "config")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("config block: {e}")))?;
    let mut model = AmpModel::<T>::new(header.model, header.rng_seed)
        .map_err(|e| Error::CorruptCheckpoint(format!("config block: {e}")))?;
    let expected: Vec<(String, (usize, usize))> = model.params.iter().map(|(n, m)| (n.to_string(), m.shape())).collect();
    for (i, (name, shape)) in expected.iter().enumerate() {
        let n = r.u32("name length")? as usize;
        let got = std::str::from_utf8(r.take(n, "name")?).map_err(|_| Error::CorruptCheckpoint("name is not UTF-8".into()))?;
        if got != name {
            return Err(Error::CorruptCheckpoint(format!("expected parameter `{name}`, found `{got}`")));
        }
        let rank = r.u32("rank")? as usize;
        if rank != 2 {
            return Err(Error::CorruptCheckpoint(format!("`{name}` has rank {rank}")));
        }
        let dims = (r.u32("dims")? as usize, r.u32("dims")? as usize);
        if dims != *shape {
            return Err(Error::CorruptCheckpoint(format!("`{name}` has shape {dims:?}, config implies {shape:?}")));
        }
        let raw = r.take(dims.0 * dims.1 * 4, "parameter data")?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        model.params.values_mut()[i] = Mat { rows: dims.0, cols: dims.1, data };
    }
    if !r.done() {
        return Err(Error::CorruptCheckpoint("trailing bytes after last parameter".into()));
    }
    if !model.params.all_finite() {
        return Err(Error::CorruptCheckpoint("non-finite parameter values".into()));
    }
    Ok(model)
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<AmpModel<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
