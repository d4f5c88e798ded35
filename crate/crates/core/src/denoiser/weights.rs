//! The `APLW` tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! "APLW" | u32 version (=1) | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 values (row-major)
//! u32 CRC-32 of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"APLW";
pub const VERSION: u32 = 1;

const WHAT: &str = "weight file";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let count: usize = dims.iter().product();
        if count != values.len() {
            return Err(Error::Model(format!(
                "tensor {name}: dims {dims:?} need {count} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { name, dims, values })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub tensors: Vec<Tensor>,
}

impl WeightFile {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn push(&mut self, tensor: Tensor) {
        self.tensors.push(tensor);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32_of(self.tensors.len(), "tensor count")?.to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Model(format!("tensor name too long: {}", t.name)))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name);
            let rank = u8::try_from(t.dims.len())
                .map_err(|_| Error::Model(format!("tensor {} has too many dims", t.name)))?;
            out.push(rank);
            for &d in &t.dims {
                out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format(WHAT, bytes.len(), "file too short"));
        }
        let body_len = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(Error::format(
                WHAT,
                body_len,
                format!("CRC-32 mismatch: stored {stored:08x}, computed {computed:08x}"),
            ));
        }
        let mut r = Reader {
            bytes: &bytes[..body_len],
            pos: 0,
        };
        if r.take(4)? != MAGIC {
            return Err(Error::format(WHAT, 0, "bad magic, expected \"APLW\""));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                WHAT,
                4,
                format!("unsupported version {version}"),
            ));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(WHAT, at + 2, "tensor name is not UTF-8"))?
                .to_owned();
            let rank = r.u8()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(WHAT, r.pos, "tensor size overflows"))?;
            let data_at = r.pos;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::format(WHAT, data_at, "tensor size overflows"))?,
            )?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::format(
                    WHAT,
                    data_at + 4 * i,
                    format!("non-finite value in tensor {name}"),
                ));
            }
            tensors.push(Tensor { name, dims, values });
        }
        if r.pos != r.bytes.len() {
            return Err(Error::format(WHAT, r.pos, "trailing bytes before checksum"));
        }
        Ok(WeightFile { tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Model(format!("{what} {v} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format(WHAT, self.pos, format!("truncated: need {n} more bytes"))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
