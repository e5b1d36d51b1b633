//! Feature cache layout: `NASF`, version byte, T and F as u32 LE, then T*F
//! f32 LE values row-major.

use std::io::{Read, Write};

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"NASF";
pub const CACHE_VERSION: u8 = 1;

pub fn write_feature_cache<W: Write>(mut w: W, feat: &FeatureMatrix) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&[CACHE_VERSION])?;
    w.write_all(&(feat.n_frames() as u32).to_le_bytes())?;
    w.write_all(&(feat.n_feats() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(feat.data().len() * 4);
    for v in feat.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// The cache does not record the hop; the caller supplies it.
pub fn read_feature_cache<R: Read>(mut r: R, frame_hop_ms: f64) -> Result<FeatureMatrix> {
    let mut head = [0u8; 13];
    r.read_exact(&mut head)?;
    if &head[..4] != CACHE_MAGIC {
        return Err(Error::invalid("feature cache: bad magic"));
    }
    if head[4] != CACHE_VERSION {
        return Err(Error::invalid(format!(
            "feature cache: unsupported version {}",
            head[4]
        )));
    }
    let t = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
    let f = u32::from_le_bytes(head[9..13].try_into().unwrap()) as usize;
    let mut raw = vec![0u8; t * f * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(data, t, f, frame_hop_ms)
}
