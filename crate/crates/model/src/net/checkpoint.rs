//! On-disk parameter archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "MICF"
//! version  u32      currently 1
//! config   u32 byte length, then UTF-8 text
//! count    u32      tensor records that follow
//! record   u32 name length, name bytes,
//!          u8 dtype (0 = f32, 1 = f64), u8 rank, rank x u32 extents,
//!          element payload in storage order
//! crc      u32      CRC-32 over every preceding byte
//! ```
//!
//! Writers stage into a temporary file in the destination directory and
//! rename over the target, so a crash never leaves a half-written file
//! under the final name.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use micseg_core::{Dtype, Real, Tensor};

use crate::error::{ModelError, Result};
use crate::net::store::ParameterStore;

const MAGIC: &[u8; 4] = b"MICF";
const VERSION: u32 = 1;

fn dtype_tag(dtype: Dtype) -> u8 {
    match dtype {
        Dtype::F32 => 0,
        Dtype::F64 => 1,
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_value<P: Real>(out: &mut Vec<u8>, v: P) {
    match P::DTYPE {
        Dtype::F32 => out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes()),
        Dtype::F64 => out.extend_from_slice(&v.to_f64().to_le_bytes()),
    }
}

/// Serialize `store` plus a caller-defined configuration echo to `path`.
pub fn save_store<P: Real>(
    store: &ParameterStore<P>,
    config_text: &str,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);

    let cfg_bytes = config_text.as_bytes();
    put_u32(&mut buf, encode_len(cfg_bytes.len(), "config text")?);
    buf.extend_from_slice(cfg_bytes);

    put_u32(&mut buf, encode_len(store.len(), "tensor count")?);
    for (name, tensor) in store.iter() {
        let name_bytes = name.as_bytes();
        put_u32(&mut buf, encode_len(name_bytes.len(), "tensor name")?);
        buf.extend_from_slice(name_bytes);
        buf.push(dtype_tag(P::DTYPE));
        let shape = tensor.shape();
        buf.push(u8::try_from(shape.len()).map_err(|_| {
            ModelError::Checkpoint(format!("rank {} exceeds format limit", shape.len()))
        })?);
        for &ext in shape {
            put_u32(&mut buf, encode_len(ext, "extent")?);
        }
        for &v in tensor.data() {
            put_value(&mut buf, v);
        }
    }

    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());

    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(&buf)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| ModelError::Io(e.error))?;
    Ok(())
}

fn encode_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n)
        .map_err(|_| ModelError::Checkpoint(format!("{what} of {n} exceeds format limit")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated while reading {what}")))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Read an archive written by [`save_store`]; returns the parameters and the
/// stored configuration echo.
pub fn load_store<P: Real>(path: &Path) -> Result<(ParameterStore<P>, String)> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 {
        return Err(ModelError::Checkpoint("file shorter than header".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes([crc_bytes[0], crc_bytes[1], crc_bytes[2], crc_bytes[3]]);
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(ModelError::Checkpoint(format!(
            "checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic, not a parameter archive".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }

    let cfg_len = r.u32("config length")? as usize;
    let config_text = String::from_utf8(r.take(cfg_len, "config text")?.to_vec())
        .map_err(|e| ModelError::Checkpoint(format!("config text is not UTF-8: {e}")))?;

    let count = r.u32("tensor count")? as usize;
    let mut store = ParameterStore::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|e| ModelError::Checkpoint(format!("tensor name is not UTF-8: {e}")))?;
        let tag = r.u8("dtype")?;
        if tag != dtype_tag(P::DTYPE) {
            return Err(ModelError::Checkpoint(format!(
                "tensor '{name}' has dtype tag {tag}, archive does not match requested precision"
            )));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let ext = r.u32("extent")? as usize;
            numel = numel.checked_mul(ext).ok_or_else(|| {
                ModelError::Checkpoint(format!("tensor '{name}' extent product overflows"))
            })?;
            shape.push(ext);
        }
        let width = P::DTYPE.byte_width();
        let payload_len = numel.checked_mul(width).ok_or_else(|| {
            ModelError::Checkpoint(format!("tensor '{name}' payload size overflows"))
        })?;
        let payload = r.take(payload_len, "payload")?;
        let mut data = Vec::with_capacity(numel);
        match P::DTYPE {
            Dtype::F32 => {
                for chunk in payload.chunks_exact(4) {
                    let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                    data.push(P::from_f64(v as f64));
                }
            }
            Dtype::F64 => {
                for chunk in payload.chunks_exact(8) {
                    let v = f64::from_le_bytes([
                        chunk[0], chunk[1], chunk[2], chunk[3], chunk[4], chunk[5], chunk[6],
                        chunk[7],
                    ]);
                    data.push(P::from_f64(v));
                }
            }
        }
        let tensor = Tensor::from_vec(&shape, data)?;
        store.insert(&name, tensor).map_err(|_| {
            ModelError::Checkpoint(format!("duplicate tensor '{name}' at record {i}"))
        })?;
    }
    if r.pos != body.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} trailing bytes after last record",
            body.len() - r.pos
        )));
    }
    Ok((store, config_text))
}
