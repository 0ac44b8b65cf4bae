//! Binary feature files.
//!
//! ```text
//! magic    8 bytes  "SGFEAT\0\0"
//! version  u32      1
//! C        u32      channels
//! L        u32      snippets
//! dtype    u32      0 = f32 little-endian
//! payload  L × C values, row-major (one row per snippet)
//! ```

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SGFEAT\0\0";
pub const VERSION: u32 = 1;
pub const DTYPE_F32_LE: u32 = 0;
const HEADER_LEN: usize = 8 + 4 * 4;

/// Encodes `L × C` row-major values, narrowing to f32.
pub fn encode_features(channels: usize, len: usize, rows: &[f64]) -> Result<Vec<u8>> {
    if rows.len() != channels * len {
        return Err(Error::dim(
            "encode_features",
            &[len, channels],
            &[rows.len()],
        ));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows.len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, channels as u32, len as u32, DTYPE_F32_LE] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in rows {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes to `(C, L, L × C values)` widened to f64.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!("header truncated at {} bytes", bytes.len()),
        ));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (version, channels, len, dtype) = (word(0), word(1) as usize, word(2) as usize, word(3));
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    if dtype != DTYPE_F32_LE {
        return Err(Error::format(
            path,
            format!("unsupported dtype code {dtype}"),
        ));
    }
    let expected = channels
        .checked_mul(len)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "shape overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes, header {channels}×{len} requires {expected}",
                payload.len()
            ),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((channels, len, values))
}

pub fn write_features(path: &Path, channels: usize, len: usize, rows: &[f64]) -> Result<()> {
    let bytes = encode_features(channels, len, rows)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}
