//! GVT binary tensor files.
//!
//! A tensor record (little-endian throughout):
//!
//! ```text
//! magic    b"GVTF"
//! version  u32 = 1
//! dtype    u8  (0 = f32, 1 = f64)
//! rank     u8
//! extents  rank x u64
//! payload  product(extents) elements, row-major
//! ```
//!
//! A bundle stores an ordered name -> tensor manifest:
//!
//! ```text
//! magic    b"GVTB"
//! version  u32 = 1
//! count    u32
//! entries  count x { name_len u32, name utf-8, tensor record }
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{DType, DynTensor, Element, Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"GVTF";
pub const BUNDLE_MAGIC: &[u8; 4] = b"GVTB";
pub const VERSION: u32 = 1;

pub fn encode<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * t.rank() + t.len() * T::DTYPE.size());
    encode_into(t, &mut out);
    out
}

fn encode_into<T: Element>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode_dyn(t: &DynTensor) -> Vec<u8> {
    match t {
        DynTensor::F32(t) => encode(t),
        DynTensor::F64(t) => encode(t),
    }
}

/// Byte cursor that reports truncation as a format error.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(format!(
                "truncated {what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn decode_record(cur: &mut Cursor<'_>) -> Result<DynTensor> {
    let magic = cur.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::format(format!("bad tensor magic {magic:?}")));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported GVT version {version}")));
    }
    let code = cur.u8("dtype")?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::format(format!("unknown dtype code {code}")))?;
    let rank = cur.u8("rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = cur.u64("extent")?;
        if e == 0 {
            return Err(Error::format("zero extent"));
        }
        shape.push(usize::try_from(e).map_err(|_| Error::format("extent overflows usize"))?);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::format("element count overflows usize"))?;
    let bytes = len
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::format("payload size overflows usize"))?;
    let payload = cur.take(bytes, "payload")?;
    Ok(match dtype {
        DType::F32 => DynTensor::F32(from_payload(&shape, payload)?),
        DType::F64 => DynTensor::F64(from_payload(&shape, payload)?),
    })
}

fn from_payload<T: Element>(shape: &[usize], payload: &[u8]) -> Result<Tensor<T>> {
    let data = payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    Tensor::from_vec(shape, data)
}

/// Decodes exactly one tensor record; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<DynTensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let t = decode_record(&mut cur)?;
    if cur.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after tensor",
            bytes.len() - cur.pos
        )));
    }
    Ok(t)
}

pub fn write_tensor<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    fs::File::create(path)?.write_all(&encode(t))?;
    Ok(())
}

pub fn write_dyn(path: impl AsRef<Path>, t: &DynTensor) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_dyn(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DynTensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn encode_bundle(entries: &[(String, DynTensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        match t {
            DynTensor::F32(t) => encode_into(t, &mut out),
            DynTensor::F64(t) => encode_into(t, &mut out),
        }
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<(String, DynTensor)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "bundle magic")?;
    if magic != BUNDLE_MAGIC {
        return Err(Error::format(format!("bad bundle magic {magic:?}")));
    }
    let version = cur.u32("bundle version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported bundle version {version}")));
    }
    let count = cur.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::format(format!("entry {i} name is not utf-8")))?
            .to_owned();
        let t = decode_record(&mut cur).map_err(|e| Error::format(format!("entry {i} ({name}): {e}")))?;
        entries.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after bundle",
            bytes.len() - cur.pos
        )));
    }
    Ok(entries)
}
