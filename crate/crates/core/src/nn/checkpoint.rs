//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "CAPNN01"            7 bytes
//! version u32                  currently 1
//! meta    u64 length + JSON    policy kind, architecture, sensing metadata
//! count   u64                  number of parameter tensors
//! per parameter:
//!   name  u64 length + bytes
//!   shape u64 rank + u64 dims
//!   data  u64 count + f64 little-endian values
//! ```
//!
//! Round trips are bitwise lossless; loads validate magic, version, and every
//! length with byte offsets in error messages.

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

pub const MAGIC: &[u8; 7] = b"CAPNN01";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, meta: &serde_json::Value, store: &ParamStore) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let meta_bytes = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_bytes);
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (_, p) in store.iter() {
        buf.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.shape.len() as u64).to_le_bytes());
        for &d in &p.value.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(p.value.data.len() as u64).to_le_bytes());
        for &v in &p.value.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what} ({n} bytes needed)"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<(serde_json::Value, ParamStore)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_bytes(&buf)
}

pub fn load_bytes(buf: &[u8]) -> Result<(serde_json::Value, ParamStore)> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(7, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad checkpoint magic {magic:?}"),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 7,
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let meta_len = r.u64("meta length")? as usize;
    let meta_off = r.pos as u64;
    let meta_bytes = r.take(meta_len, "meta")?;
    let meta: serde_json::Value = serde_json::from_slice(meta_bytes).map_err(|e| Error::Format {
        offset: meta_off,
        reason: format!("invalid meta JSON: {e}"),
    })?;
    let count = r.u64("parameter count")? as usize;
    let mut store = ParamStore::new();
    for k in 0..count {
        let name_len = r.u64("name length")? as usize;
        let name_off = r.pos as u64;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format {
                offset: name_off,
                reason: format!("parameter {k} name is not UTF-8"),
            })?
            .to_string();
        let rank = r.u64("shape rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("shape dim")? as usize);
        }
        let n = r.u64("value count")? as usize;
        let expect: usize = shape.iter().product();
        if n != expect {
            return Err(Error::Format {
                offset: r.pos as u64,
                reason: format!("parameter '{name}': {n} values for shape {shape:?}"),
            });
        }
        let raw = r.take(n * 8, "parameter data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.add(name, Tensor::from_vec(&shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            reason: format!("{} trailing bytes after last parameter", buf.len() - r.pos),
        });
    }
    Ok((meta, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, MlpSpec};

    #[test]
    fn round_trip_is_bitwise() {
        let mut store = ParamStore::new();
        let _ = Mlp::new(&mut store, "net", MlpSpec::new(4, &[8, 4], 2, 3)).unwrap();
        let meta = serde_json::json!({"kind": "test", "rays": 32});
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.ckpt");
        save(&p, &meta, &store).unwrap();
        let (m2, s2) = load(&p).unwrap();
        assert_eq!(m2["kind"], "test");
        assert_eq!(store.len(), s2.len());
        for ((_, a), (_, b)) in store.iter().zip(s2.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        // Saving the reload reproduces the file byte for byte.
        let p2 = dir.path().join("net2.ckpt");
        save(&p2, &m2, &s2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncation_is_rejected_with_offset() {
        let mut store = ParamStore::new();
        let _ = Mlp::new(&mut store, "net", MlpSpec::new(4, &[8], 2, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.ckpt");
        save(&p, &serde_json::json!({}), &store).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        match load_bytes(&bytes[..bytes.len() - 5]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        match load_bytes(b"NOTMAGIC-at-all") {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected magic error, got {other:?}"),
        }
    }
}
