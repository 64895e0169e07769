//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "WDCKPT\0\0"
//! version    u32      1
//! meta_len   u32      followed by meta_len bytes of UTF-8 `key = value` text
//! n_params   u32
//! per parameter:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, ndim × u64 dims
//!   values   prod(dims) × f64 (IEEE-754 bits, little-endian)
//! ```

use std::fs;
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::config::KvMap;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WDCKPT\0\0";
pub const VERSION: u32 = 1;

pub fn encode(meta: &KvMap, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = meta.to_string();
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, value) in params.names.iter().zip(&params.values) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.ndim() as u32).to_le_bytes());
        for &d in value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8".to_string())
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Parses a checkpoint into its metadata and parameters (gradients zeroed).
pub fn decode(buf: &[u8]) -> std::result::Result<(KvMap, ParamSet), String> {
    let mut r = Reader::new(buf);
    if r.take(8)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let meta = KvMap::parse(&r.string()?).map_err(|e| e.to_string())?;
    let n = r.u32()? as usize;
    let mut params = ParamSet::default();
    for _ in 0..n {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("size overflow")?;
        let data = r.f64s(len)?;
        params.add(name, Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?);
    }
    if !r.at_end() {
        return Err("trailing bytes after last parameter".into());
    }
    Ok((meta, params))
}

pub fn save(path: &Path, meta: &KvMap, params: &ParamSet) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(meta, params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(KvMap, ParamSet)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })
}
