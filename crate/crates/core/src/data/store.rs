//! Window shards and their CSV manifest.
//!
//! ```text
//! "HMWS" | u32 version | u64 count | u32 len | u32 channels | u32 dtype | f64 LE payload
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sqi::SqiReport;
use crate::error::{HimaeError, Result};
use crate::tensor::{Shape3, Tensor3};

pub const SHARD_MAGIC: &[u8; 4] = b"HMWS";
pub const SHARD_VERSION: u32 = 1;
const DTYPE_F64: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 4;

pub fn shard_bytes(windows: &Tensor3) -> Vec<u8> {
    let s = windows.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + windows.len() * 8);
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.extend_from_slice(&(s.batch as u64).to_le_bytes());
    out.extend_from_slice(&(s.time as u32).to_le_bytes());
    out.extend_from_slice(&(s.channels as u32).to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    for v in windows.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_shard(buf: &[u8]) -> Result<Tensor3> {
    if buf.len() < HEADER_LEN || &buf[..4] != SHARD_MAGIC {
        return Err(HimaeError::Format("not a window shard".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    if u32_at(4) != SHARD_VERSION {
        return Err(HimaeError::Format(format!("unsupported shard version {}", u32_at(4))));
    }
    let count = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let (len, channels, dtype) = (u32_at(16) as usize, u32_at(20) as usize, u32_at(24));
    if dtype != DTYPE_F64 {
        return Err(HimaeError::Format(format!("unknown shard dtype {dtype}")));
    }
    let shape = Shape3::new(count, channels, len);
    let payload = &buf[HEADER_LEN..];
    if payload.len() != shape.numel() * 8 {
        return Err(HimaeError::Format(format!(
            "shard payload has {} bytes, header implies {}",
            payload.len(),
            shape.numel() * 8
        )));
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor3::from_vec(shape, data)
}

pub fn write_shard(path: &Path, windows: &Tensor3) -> Result<()> {
    Ok(std::fs::write(path, shard_bytes(windows))?)
}

pub fn read_shard(path: &Path) -> Result<Tensor3> {
    parse_shard(&std::fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub window_id: u64,
    pub subject_id: u32,
    pub gamma: f64,
    pub sigma_zc: Option<f64>,
    pub coverage: f64,
    pub agreement: f64,
    pub composite: f64,
    pub accepted: bool,
    pub reject_stage: String,
}

impl ManifestRow {
    pub fn new(window_id: u64, subject_id: u32, r: &SqiReport) -> Self {
        Self {
            window_id,
            subject_id,
            gamma: r.gamma,
            sigma_zc: r.sigma_zc,
            coverage: r.coverage,
            agreement: r.agreement,
            composite: r.composite,
            accepted: r.accepted,
            reject_stage: r.reject_stage.map(|s| s.name().to_string()).unwrap_or_default(),
        }
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shard_round_trip() {
        let t = Tensor3::from_vec(Shape3::new(2, 1, 3), vec![1.0, -2.0, 0.5, 0.0, 7.0, -0.25]).unwrap();
        let bytes = shard_bytes(&t);
        assert_eq!(parse_shard(&bytes).unwrap(), t);
        assert!(parse_shard(&bytes[..bytes.len() - 8]).is_err());
    }
}
