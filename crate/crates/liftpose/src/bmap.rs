//! Belief-stack files: magic `BMAP`, little-endian `u32` height, width and
//! channel count, then `f32` values, channel-major and row-major within a
//! channel.

use std::fs;
use std::path::Path;

use liftpose_core::beliefmap::BeliefError;
use liftpose_core::BeliefStack;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"BMAP";

#[derive(Debug, Error)]
pub enum BmapError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a belief-stack file: {0}")]
    Format(String),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// Values are narrowed to `f32`.
pub fn to_bytes(stack: &BeliefStack) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * stack.data().len());
    out.extend_from_slice(MAGIC);
    for d in [stack.height(), stack.width(), stack.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in stack.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<BeliefStack, BmapError> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(BmapError::Format("bad magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| BmapError::Format("dimensions overflow".into()))?;
    if bytes.len() - 16 != 4 * n {
        return Err(BmapError::Format(format!("expected {} data bytes, found {}", 4 * n, bytes.len() - 16)));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(BeliefStack::from_data(w, h, c, data)?)
}

pub fn save_bmap(path: &Path, stack: &BeliefStack) -> Result<(), BmapError> {
    fs::write(path, to_bytes(stack)).map_err(|source| BmapError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_bmap(path: &Path) -> Result<BeliefStack, BmapError> {
    let bytes = fs::read(path).map_err(|source| BmapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
