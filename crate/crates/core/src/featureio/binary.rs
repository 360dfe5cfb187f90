//! FMX (matrix) and LBL (label) codecs.
//!
//! ```text
//! FMX: "FMX1" | rows u32 LE | dims u32 LE | rows*dims f32 LE, row-major
//! LBL: "LBL1" | count u32 LE | count i32 LE
//! ```

use std::path::Path;

use super::{FeatureIoError, FeatureMatrix, Result};

pub const FMX_MAGIC: &[u8; 4] = b"FMX1";
pub const LBL_MAGIC: &[u8; 4] = b"LBL1";
const HEADER_FMX: usize = 12;
const HEADER_LBL: usize = 8;

pub fn encode_fmx(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_FMX + 4 * m.values().len());
    out.extend_from_slice(FMX_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.dims() as u32).to_le_bytes());
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_lbl(labels: &[i32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LBL + 4 * labels.len());
    out.extend_from_slice(LBL_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

fn check_magic(bytes: &[u8], magic: &[u8; 4], path: &Path) -> Result<()> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(FeatureIoError::Magic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    Ok(())
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn check_len(bytes: &[u8], expected: u64, offset: u64, path: &Path) -> Result<()> {
    if bytes.len() as u64 != expected {
        return Err(FeatureIoError::Length {
            path: path.to_path_buf(),
            offset,
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

/// `path` is only used for error messages.
pub fn decode_fmx(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    check_magic(bytes, FMX_MAGIC, path)?;
    if bytes.len() < HEADER_FMX {
        return Err(FeatureIoError::Length {
            path: path.to_path_buf(),
            offset: 4,
            expected: HEADER_FMX as u64,
            actual: bytes.len() as u64,
        });
    }
    let rows = u32_at(bytes, 4) as u64;
    let dims = u32_at(bytes, 8) as u64;
    check_len(
        bytes,
        HEADER_FMX as u64 + 4 * rows * dims,
        HEADER_FMX as u64,
        path,
    )?;
    if rows == 0 || dims == 0 {
        return Err(FeatureIoError::Invalid(format!(
            "{}: empty {rows}x{dims} matrix",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity((rows * dims) as usize);
    for (i, chunk) in bytes[HEADER_FMX..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(FeatureIoError::NonFinite {
                path: path.to_path_buf(),
                offset: (HEADER_FMX + 4 * i) as u64,
                value: v,
            });
        }
        values.push(v);
    }
    FeatureMatrix::new(rows as usize, dims as usize, values)
}

pub fn decode_lbl(bytes: &[u8], path: &Path) -> Result<Vec<i32>> {
    check_magic(bytes, LBL_MAGIC, path)?;
    if bytes.len() < HEADER_LBL {
        return Err(FeatureIoError::Length {
            path: path.to_path_buf(),
            offset: 4,
            expected: HEADER_LBL as u64,
            actual: bytes.len() as u64,
        });
    }
    let count = u32_at(bytes, 4) as u64;
    check_len(
        bytes,
        HEADER_LBL as u64 + 4 * count,
        HEADER_LBL as u64,
        path,
    )?;
    Ok(bytes[HEADER_LBL..]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
