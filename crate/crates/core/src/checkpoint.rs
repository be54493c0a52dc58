//! Binary container for model parameters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "CDIFCKPT"
//! version      u32      currently 1
//! desc_len     u32      length of the JSON architecture descriptor
//! descriptor   desc_len bytes of UTF-8 JSON
//! n_tensors    u32
//! per tensor:
//!   name_len   u32, name bytes (UTF-8)
//!   ndim       u32, then ndim u32 extents
//!   data       prod(extents) f32 values
//! crc32        u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CDIFCKPT";
pub const VERSION: u32 = 1;

const MAX_NAME: usize = 1024;
const MAX_NDIM: usize = 8;
const MAX_DESCRIPTOR: usize = 1 << 20;

/// Decoded container contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub descriptor: Value,
    pub tensors: Vec<(String, Tensor)>,
}

/// Lowercase hex CRC-32 of `bytes`, the checksum format used in every manifest.
pub fn crc_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

pub fn encode(descriptor: &Value, tensors: &[(String, Tensor)]) -> Vec<u8> {
    let desc = serde_json::to_vec(descriptor).expect("serde_json::Value always serializes");
    let payload: usize = tensors.iter().map(|(n, t)| 8 + n.len() + 4 * t.shape().len() + 4 * t.numel()).sum();
    let mut out = Vec::with_capacity(24 + desc.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(&desc);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Corruption(format!("truncated checkpoint while reading {what}")));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses and validates a container. Any structural problem, checksum
/// mismatch or non-finite value is a corruption error.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Corruption("checkpoint too short".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Corruption("bad checkpoint magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([trailer[0], trailer[1], trailer[2], trailer[3]]);
    if crc32fast::hash(body) != stored {
        return Err(Error::Corruption("checkpoint CRC mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Corruption(format!("unsupported checkpoint version {version}")));
    }
    let desc_len = r.u32("descriptor length")? as usize;
    if desc_len > MAX_DESCRIPTOR {
        return Err(Error::Corruption(format!("descriptor length {desc_len} too large")));
    }
    let descriptor: Value = serde_json::from_slice(r.take(desc_len, "descriptor")?)
        .map_err(|e| Error::Corruption(format!("descriptor is not JSON: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        if name_len > MAX_NAME {
            return Err(Error::Corruption(format!("tensor {i}: name length {name_len} too large")));
        }
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Corruption(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let ndim = r.u32("rank")? as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::Corruption(format!("tensor {name}: rank {ndim} out of range")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut numel = 1usize;
        for _ in 0..ndim {
            let d = r.u32("extent")? as usize;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n > 0 && n <= r.remaining() / 4)
                .ok_or_else(|| Error::Corruption(format!("tensor {name}: extents exceed the remaining payload")))?;
            shape.push(d);
        }
        let raw = r.take(numel * 4, "tensor data")?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Corruption(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.remaining() != 0 {
        return Err(Error::Corruption(format!("{} trailing bytes before CRC", r.remaining())));
    }
    Ok(Checkpoint { descriptor, tensors })
}

/// Identity of an encoded checkpoint: the CRC over everything before the
/// trailer, which is the trailer value itself for intact files.
pub fn checksum(bytes: &[u8]) -> String {
    crc_hex(&bytes[..bytes.len().saturating_sub(4)])
}

/// Writes the checkpoint and returns its [`checksum`].
pub fn save(path: &Path, descriptor: &Value, tensors: &[(String, Tensor)]) -> Result<String> {
    let bytes = encode(descriptor, tensors);
    fs::write(path, &bytes)?;
    Ok(checksum(&bytes))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

/// [`checksum`] of a checkpoint file on disk.
pub fn file_checksum(path: &Path) -> Result<String> {
    Ok(checksum(&fs::read(path)?))
}

/// Checks that `descriptor["kind"]` equals `kind`.
pub fn expect_kind(descriptor: &Value, kind: &str) -> Result<()> {
    match descriptor.get("kind").and_then(Value::as_str) {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::Corruption(format!("expected a {kind} checkpoint, found {other:?}"))),
    }
}
