//! Little-endian checkpoint container.
//!
//! ```text
//! "HMAE" | u32 version | u64 len | metadata JSON
//! u64 count | count x (u32 len | name | u8 dtype | u8 ndim | ndim x u64 | payload)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{HimaeError, Result};
use crate::tensor::{Shape3, Tensor3};

pub const MAGIC: &[u8; 4] = b"HMAE";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor3)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(HimaeError::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| HimaeError::Format("length overflow".into()))
    }
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor3> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(64 + meta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.push(3);
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(HimaeError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(HimaeError::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.len()?;
        let meta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.len()?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| HimaeError::Format("tensor name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(HimaeError::Format(format!("tensor `{name}` has unknown dtype {dtype}")));
            }
            let ndim = r.u8()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.len()?);
            }
            if ndim != 3 {
                return Err(HimaeError::Format(format!("tensor `{name}` has rank {ndim}, expected 3")));
            }
            let shape = Shape3::new(dims[0], dims[1], dims[2]);
            let bytes = r.take(shape.numel() * 8)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor3::from_vec(shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(HimaeError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { meta, tensors })
    }

    /// Writes the file and returns the SHA-256 of its bytes.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let ck = Checkpoint {
            meta: serde_json::json!({"step": 3, "name": "x"}),
            tensors: vec![
                ("a".into(), Tensor3::from_signal(&[1.5, -0.0, f64::MIN_POSITIVE]).unwrap()),
                ("b".into(), Tensor3::zeros(Shape3::new(2, 3, 1))),
            ],
        };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"HMAE");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"HMAX\x01\0\0\0").is_err());
        let ck = Checkpoint {
            meta: serde_json::json!(null),
            tensors: vec![("a".into(), Tensor3::scalar(1.0))],
        };
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
