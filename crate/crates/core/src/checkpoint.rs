//! Versioned binary container of named tensors.
//!
//! Layout: magic `AGMT`, `u32` format version, then one record per
//! tensor until end of file: `u32` name length, UTF-8 name, `u32` rank,
//! `u64` per dimension, little-endian `f64` payload. All integers are
//! little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AGMT";
pub const VERSION: u32 = 1;

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if buf.len() < 8 || &buf[..4] != MAGIC {
        return Err(Error::CheckpointVersion("missing AGMT magic bytes".into()));
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion(format!("found version {version}, expected {VERSION}")));
    }
    let mut out = Vec::new();
    while r.pos < buf.len() {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims.as_slice() {
            [] => (1, 1),
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => return Err(Error::Checkpoint(format!("tensor `{name}` has unsupported rank {rank}"))),
        };
        let count = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?;
        let bytes = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

/// Writes atomically: a temporary sibling is written, synced and renamed.
pub fn save_tensors(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode_tensors(tensors);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_tensors(&fs::read(path)?)
}

/// Looks up a tensor by name.
pub fn find<'a>(tensors: &'a [(String, Tensor)], name: &str) -> Result<&'a Tensor> {
    tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
}
