//! `HLT1` tensor container: a flat list of named little-endian arrays with
//! a trailing CRC32.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "HLT1"
//! 4       4           record count (u32 LE)
//!         per record:
//!         2           name length n (u16 LE)
//!         n           name (UTF-8)
//!         1           dtype (0 = f32, 1 = f64)
//!         1           ndim d (<= 8)
//!         4*d         dims (u32 LE each)
//!         size*prod   payload, C order, little-endian
//! end-4   4           CRC32 (IEEE, reflected 0xEDB88320) of all prior bytes
//! ```
//!
//! Example, one f32 record `"a"` holding `[1.0, -2.0]`:
//!
//! ```text
//! 48 4c 54 31  01 00 00 00  01 00  61  00  01  02 00 00 00
//! 00 00 80 3f  00 00 00 c0  cb b4 2b a5
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{ContainerError, Result};

pub const MAGIC: &[u8; 4] = b"HLT1";
pub const MAX_NDIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, ContainerError> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            t => Err(ContainerError::UnknownDtype(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(a) => a.shape(),
            TensorData::F64(a) => a.shape(),
        }
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> ArrayD<f64> {
        match self {
            TensorData::F32(a) => a.mapv(f64::from),
            TensorData::F64(a) => a.clone(),
        }
    }

    /// Values narrowed to f32.
    pub fn to_f32(&self) -> ArrayD<f32> {
        match self {
            TensorData::F32(a) => a.clone(),
            TensorData::F64(a) => a.mapv(|v| v as f32),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub data: TensorData,
}

impl TensorRecord {
    pub fn f32(name: impl Into<String>, data: ArrayD<f32>) -> Self {
        TensorRecord {
            name: name.into(),
            data: TensorData::F32(data),
        }
    }

    pub fn f64(name: impl Into<String>, data: ArrayD<f64>) -> Self {
        TensorRecord {
            name: name.into(),
            data: TensorData::F64(data),
        }
    }
}

/// Looks up a record by name.
pub fn find<'a>(records: &'a [TensorRecord], name: &str) -> Result<&'a TensorRecord, ContainerError> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| ContainerError::MissingRecord(name.to_string()))
}

fn validate(records: &[TensorRecord]) -> Result<(), ContainerError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(ContainerError::DuplicateName(r.name.clone()));
        }
        let bad = |reason: String| ContainerError::InvalidRecord {
            name: r.name.clone(),
            reason,
        };
        if r.name.len() > u16::MAX as usize {
            return Err(bad(format!("name is {} bytes, limit {}", r.name.len(), u16::MAX)));
        }
        let shape = r.data.shape();
        if shape.len() > MAX_NDIM {
            return Err(bad(format!("{} dims exceeds {MAX_NDIM}", shape.len())));
        }
        if let Some(d) = shape.iter().find(|d| **d > u32::MAX as usize) {
            return Err(bad(format!("dim {d} exceeds u32")));
        }
        if u32::try_from(records.len()).is_err() {
            return Err(bad("too many records".into()));
        }
    }
    Ok(())
}

/// Serializes records into the container byte layout.
pub fn encode(records: &[TensorRecord]) -> Result<Vec<u8>, ContainerError> {
    validate(records)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.data.dtype().tag());
        let shape = r.data.shape();
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        // iter() walks logical (C) order regardless of memory layout
        match &r.data {
            TensorData::F32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            TensorData::F64(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ContainerError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses container bytes. Checks run in order: magic, structure and
/// bounds, then the checksum.
pub fn decode(bytes: &[u8]) -> Result<Vec<TensorRecord>, ContainerError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
    }
    if bytes.len() < 12 {
        return Err(ContainerError::Truncated {
            offset: 0,
            needed: 12,
            available: bytes.len(),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let mut cur = Cursor { bytes: body, pos: 4 };
    let count = cur.u32()? as usize;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| ContainerError::BadName)?
            .to_string();
        let dtype = Dtype::from_tag(cur.u8()?)?;
        let ndim = cur.u8()? as usize;
        if ndim > MAX_NDIM {
            return Err(ContainerError::InvalidRecord {
                name,
                reason: format!("{ndim} dims exceeds {MAX_NDIM}"),
            });
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32()? as usize);
        }
        let payload_len = dims
            .iter()
            .try_fold(dtype.size(), |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| ContainerError::InvalidRecord {
                name: name.clone(),
                reason: "payload size overflows".into(),
            })?;
        let payload = cur.take(payload_len)?;
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                ArrayD::from_shape_vec(
                    IxDyn(&dims),
                    payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                )
                .expect("length checked"),
            ),
            Dtype::F64 => TensorData::F64(
                ArrayD::from_shape_vec(
                    IxDyn(&dims),
                    payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                )
                .expect("length checked"),
            ),
        };
        if !seen.insert(name.clone()) {
            return Err(ContainerError::DuplicateName(name));
        }
        records.push(TensorRecord { name, data });
    }
    if cur.pos != body.len() {
        return Err(ContainerError::TrailingBytes(body.len() - cur.pos));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ContainerError::CrcMismatch { stored, computed });
    }
    Ok(records)
}

pub fn write_container(path: impl AsRef<Path>, records: &[TensorRecord]) -> Result<()> {
    let bytes = encode(records)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<TensorRecord>> {
    let bytes = fs::read(path)?;
    Ok(decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden_record() -> TensorRecord {
        TensorRecord::f32("a", ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, -2.0]).unwrap())
    }

    #[test]
    fn empty_container_is_twelve_bytes() {
        let bytes = encode(&[]).unwrap();
        assert_eq!(bytes, [0x48, 0x4c, 0x54, 0x31, 0, 0, 0, 0, 0xeb, 0xc2, 0xaf, 0x17]);
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn golden_bytes() {
        let bytes = encode(&[golden_record()]).unwrap();
        let expected: [u8; 29] = [
            0x48, 0x4c, 0x54, 0x31, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x61, 0x00, 0x01, 0x02, 0x00,
            0x00, 0x00, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, 0xcb, 0xb4, 0x2b, 0xa5,
        ];
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corrupt_payload_is_crc_error() {
        let mut bytes = encode(&[golden_record()]).unwrap();
        bytes[20] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(ContainerError::CrcMismatch { .. })));
    }

    #[test]
    fn wrong_magic_wins_over_crc() {
        let mut bytes = encode(&[golden_record()]).unwrap();
        bytes[0] = b'X';
        bytes[20] ^= 0x01;
        assert!(matches!(decode(&bytes), Err(ContainerError::BadMagic(_))));
        assert!(matches!(decode(b"HL"), Err(ContainerError::BadMagic(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let bytes = encode(&[golden_record()]).unwrap();
        for cut in 4..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut} accepted");
        }
        assert!(matches!(decode(&bytes[..bytes.len() - 6]), Err(ContainerError::Truncated { .. })));
        let mut long = bytes[..bytes.len() - 4].to_vec();
        long.extend_from_slice(&[0, 0]);
        let crc = crc32fast::hash(&long);
        long.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode(&long), Err(ContainerError::TrailingBytes(2))));
    }

    #[test]
    fn oversized_dims_do_not_allocate() {
        let mut bytes = encode(&[golden_record()]).unwrap();
        // dims[0] = 0xffffffff
        bytes[13..17].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(ContainerError::Truncated { .. })));
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = golden_record();
        assert!(matches!(encode(&[r.clone(), r]), Err(ContainerError::DuplicateName(_))));
    }

    #[test]
    fn large_record_roundtrip() {
        let data = ArrayD::from_shape_fn(IxDyn(&[4, 64, 64]), |i| (i[0] * 4096 + i[1] * 64 + i[2]) as f32 * 0.37);
        let rec = TensorRecord::f32("img", data);
        let bytes = encode(std::slice::from_ref(&rec)).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, vec![rec]);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn non_standard_layout_is_written_in_c_order() {
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0.0f64, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let t = a.t().to_owned();
        let transposed_view = a.clone().reversed_axes();
        let r1 = encode(&[TensorRecord::f64("t", t)]).unwrap();
        let r2 = encode(&[TensorRecord::f64("t", transposed_view)]).unwrap();
        assert_eq!(r1, r2);
    }
}
