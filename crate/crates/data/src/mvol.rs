//! Minimal volume container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes "MVOL"
//! version u8, currently 1
//! kind    u8: 0 = intensity, 1 = label
//! dtype   u8: 0 = f32, 1 = u8; intensity files are f32, label files u8
//! extents 3 x u32, (D, H, W)
//! spacing 3 x f32, millimetres per axis
//! payload voxel values, x fastest
//! crc     u32 CRC-32 over every preceding byte
//! ```

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{DataError, Result};
use crate::types::{LabelMap, Modality, Volume};

const MAGIC: &[u8; 4] = b"MVOL";
const VERSION: u8 = 1;
const KIND_INTENSITY: u8 = 0;
const KIND_LABEL: u8 = 1;
const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

/// Either payload a file can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum MvolObject {
    Intensity(Volume),
    Labels(LabelMap),
}

fn header(kind: u8, dtype: u8, extents: [usize; 3], spacing: [f32; 3]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(kind);
    buf.push(dtype);
    for e in extents {
        let e = u32::try_from(e).map_err(|_| DataError::ExtentOverflow)?;
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for s in spacing {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    Ok(buf)
}

fn write_atomic(path: &Path, buf: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(buf)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| DataError::Io(e.error))?;
    Ok(())
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    let mut buf = header(KIND_INTENSITY, DTYPE_F32, v.extents(), v.spacing())?;
    for &x in v.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    write_atomic(path, &buf)
}

pub fn write_labels(l: &LabelMap, path: &Path) -> Result<()> {
    let mut buf = header(KIND_LABEL, DTYPE_U8, l.extents(), l.spacing())?;
    buf.extend_from_slice(l.indices());
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    write_atomic(path, &buf)
}

pub fn write_mvol(obj: &MvolObject, path: &Path) -> Result<()> {
    match obj {
        MvolObject::Intensity(v) => write_volume(v, path),
        MvolObject::Labels(l) => write_labels(l, path),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(DataError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// The modality tag is not part of the format; loaded volumes come back as
/// [`Modality::Other`] and callers assign the role they know from context.
pub fn read_mvol(path: &Path) -> Result<MvolObject> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 + 4 {
        return Err(DataError::Truncated("header"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([crc_bytes[0], crc_bytes[1], crc_bytes[2], crc_bytes[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DataError::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(DataError::Version(version));
    }
    let kind = r.u8("kind")?;
    let dtype = r.u8("dtype")?;
    let mut extents = [0usize; 3];
    for e in &mut extents {
        *e = r.u32("extent")? as usize;
    }
    let mut spacing = [0f32; 3];
    for s in &mut spacing {
        *s = r.f32("spacing")?;
    }
    let numel = extents
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or(DataError::ExtentOverflow)?;

    let obj = match (kind, dtype) {
        (KIND_INTENSITY, DTYPE_F32) => {
            let payload_len = numel.checked_mul(4).ok_or(DataError::ExtentOverflow)?;
            let payload = r.take(payload_len, "payload")?;
            let mut data = Vec::with_capacity(numel);
            for c in payload.chunks_exact(4) {
                data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
            }
            MvolObject::Intensity(Volume::new(extents, spacing, Modality::Other, data)?)
        }
        (KIND_LABEL, DTYPE_U8) => {
            let payload = r.take(numel, "payload")?;
            MvolObject::Labels(LabelMap::new(extents, spacing, payload.to_vec())?)
        }
        (KIND_INTENSITY, d) | (KIND_LABEL, d) => {
            return Err(DataError::KindDtype { kind, dtype: d })
        }
        (k, _) => return Err(DataError::BadKind(k)),
    };
    if r.pos != body.len() {
        return Err(DataError::Truncated("trailing bytes after payload"));
    }
    Ok(obj)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match read_mvol(path)? {
        MvolObject::Intensity(v) => Ok(v),
        MvolObject::Labels(_) => Err(DataError::KindMismatch {
            expected: "intensity",
            found: "label",
        }),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    match read_mvol(path)? {
        MvolObject::Labels(l) => Ok(l),
        MvolObject::Intensity(_) => Err(DataError::KindMismatch {
            expected: "label",
            found: "intensity",
        }),
    }
}
