//! Self-describing binary container for named numeric arrays.
//!
//! One format serves both persistence needs of the crate: channel dataset
//! dumps and training checkpoints. The layout is little-endian throughout
//! and ends with a SHA-256 digest of everything before it, so truncation and
//! corruption are both detected at load time.
//!
//! ```text
//! offset  size            field
//! 0       8               magic b"BLCONT01"
//! 8       4               u32: number of header pairs P
//!         per pair        u16 key length, key bytes (UTF-8),
//!                         u32 value length, value bytes (UTF-8)
//!         4               u32: number of array entries E
//!         per entry       u16 name length, name bytes (UTF-8),
//!                         u8 kind (0 = real f64, 1 = complex, interleaved
//!                            re/im f64 pairs),
//!                         u8 rank, rank x u32 dims,
//!                         payload: product(dims) x (8 or 16) bytes, f64
//!         32              SHA-256 over all preceding bytes
//! ```
//!
//! Header values are strings; numeric metadata is rendered in decimal.
//! Binary float state always goes into array entries, never the header, so
//! round trips are bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BLCONT01";

/// A named array payload.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl ArrayEntry {
    pub fn real(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(Error::Shape {
                op: "ArrayEntry::real",
                details: format!("dims {dims:?} need {want} values, got {}", data.len()),
            });
        }
        Ok(Self { dims, data: ArrayData::Real(data) })
    }

    pub fn complex(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(Error::Shape {
                op: "ArrayEntry::complex",
                details: format!("dims {dims:?} need {want} values, got {}", data.len()),
            });
        }
        Ok(Self { dims, data: ArrayData::Complex(data) })
    }
}

/// In-memory form of a container: string header plus named arrays. Both maps
/// are ordered so serialization is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub header: BTreeMap<String, String>,
    pub entries: BTreeMap<String, ArrayEntry>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Serializes to bytes (including the trailing digest).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&u32::try_from(self.header.len()).map_err(count_err)?.to_le_bytes());
        for (k, v) in &self.header {
            write_str::<u16>(&mut buf, k)?;
            write_str::<u32>(&mut buf, v)?;
        }
        buf.extend_from_slice(&u32::try_from(self.entries.len()).map_err(count_err)?.to_le_bytes());
        for (name, entry) in &self.entries {
            write_str::<u16>(&mut buf, name)?;
            let kind: u8 = match entry.data {
                ArrayData::Real(_) => 0,
                ArrayData::Complex(_) => 1,
            };
            buf.push(kind);
            buf.push(u8::try_from(entry.dims.len()).map_err(|_| Error::Domain {
                op: "Container::to_bytes",
                details: format!("rank {} exceeds 255", entry.dims.len()),
            })?);
            for &d in &entry.dims {
                buf.extend_from_slice(&u32::try_from(d).map_err(count_err)?.to_le_bytes());
            }
            match &entry.data {
                ArrayData::Real(v) => {
                    for x in v {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
                ArrayData::Complex(v) => {
                    for z in v {
                        buf.extend_from_slice(&z.re.to_le_bytes());
                        buf.extend_from_slice(&z.im.to_le_bytes());
                    }
                }
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    /// Parses bytes produced by [`to_bytes`](Self::to_bytes), verifying the
    /// magic and the trailing digest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Integrity(format!(
                "container truncated: {} bytes is below the minimum",
                bytes.len()
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let want = Sha256::digest(body);
        if digest != want.as_slice() {
            return Err(Error::Integrity("container checksum mismatch".into()));
        }
        let mut r = Cursor { buf: body, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Integrity("bad container magic".into()));
        }
        let n_header = r.u32()? as usize;
        let mut header = BTreeMap::new();
        for _ in 0..n_header {
            let klen = r.u16()? as usize;
            let key = r.string(klen)?;
            let vlen = r.u32()? as usize;
            let val = r.string(vlen)?;
            header.insert(key, val);
        }
        let n_entries = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..n_entries {
            let nlen = r.u16()? as usize;
            let name = r.string(nlen)?;
            let kind = r.u8()?;
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let count: usize = dims.iter().product();
            let data = match kind {
                0 => {
                    let mut v = Vec::with_capacity(count);
                    for _ in 0..count {
                        v.push(r.f64()?);
                    }
                    ArrayData::Real(v)
                }
                1 => {
                    let mut v = Vec::with_capacity(count);
                    for _ in 0..count {
                        let re = r.f64()?;
                        let im = r.f64()?;
                        v.push(Complex64::new(re, im));
                    }
                    ArrayData::Complex(v)
                }
                other => {
                    return Err(Error::Integrity(format!("unknown array kind {other}")));
                }
            };
            entries.insert(name, ArrayEntry { dims, data });
        }
        if r.pos != body.len() {
            return Err(Error::Integrity(format!(
                "container has {} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Self { header, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn count_err<E>(_: E) -> Error {
    Error::Domain {
        op: "Container::to_bytes",
        details: "count exceeds u32".into(),
    }
}

fn write_str<L>(buf: &mut Vec<u8>, s: &str) -> Result<()>
where
    L: TryFrom<usize> + LenBytes,
{
    let len = L::try_from(s.len()).map_err(|_| Error::Domain {
        op: "Container::to_bytes",
        details: format!("string of {} bytes exceeds the length field", s.len()),
    })?;
    len.push_le(buf);
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

trait LenBytes {
    fn push_le(self, buf: &mut Vec<u8>);
}

impl LenBytes for u16 {
    fn push_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
}

impl LenBytes for u32 {
    fn push_le(self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity("container truncated mid-record".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Integrity("container string is not UTF-8".into()))
    }
}
