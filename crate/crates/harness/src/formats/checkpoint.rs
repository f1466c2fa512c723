//! Binary checkpoints.
//!
//! Layout (little endian): 7-byte magic `MVDITCK`, u8 version, u32 length and
//! UTF-8 `key=value` metadata, u32 tensor count, then per tensor a u16 name
//! length, the name, a u8 dtype (0 = f32, 1 = f64), u32 rows, u32 cols and
//! the values.

use std::path::Path;

use mvdit_core::params::Precision;
use mvdit_core::Tensor;

use super::{FormatError, Result};

pub const MAGIC: &[u8; 7] = b"MVDITCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Precision, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _, _)| n == name).map(|(_, _, t)| t)
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.lines().find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, prec, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match prec {
                Precision::F32 => 0,
                Precision::F64 => 1,
            });
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for &x in t.data() {
                match prec {
                    Precision::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                    Precision::F64 => out.extend_from_slice(&x.to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(FormatError::BadMagic { path: path.into() });
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(FormatError::Version { path: path.into(), found: version, expected: VERSION });
        }
        let n = r.u32()? as usize;
        let meta = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| FormatError::parse(path, "metadata is not UTF-8"))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| FormatError::parse(path, "tensor name is not UTF-8"))?;
            let prec = match r.u8()? {
                0 => Precision::F32,
                1 => Precision::F64,
                d => return Err(FormatError::parse(path, format!("unknown dtype {d}"))),
            };
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            let len = rows.checked_mul(cols).ok_or(FormatError::Truncated { path: path.into() })?;
            let data: Vec<f64> = match prec {
                Precision::F32 => r
                    .take(len.checked_mul(4).ok_or(FormatError::Truncated { path: path.into() })?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                Precision::F64 => r
                    .take(len.checked_mul(8).ok_or(FormatError::Truncated { path: path.into() })?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            let t = Tensor::from_vec(rows, cols, data).map_err(|e| FormatError::parse(path, e.to_string()))?;
            tensors.push((name, prec, t));
        }
        if r.pos != bytes.len() {
            return Err(FormatError::parse(path, "trailing bytes"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| FormatError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(FormatError::Truncated { path: self.path.into() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
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
