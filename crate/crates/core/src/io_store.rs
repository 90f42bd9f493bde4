//! File formats and atomic writes.
//!
//! Tensor files: the 8 magic bytes `RPSFTNS1`, the rank as a little-endian
//! `u32`, one little-endian `u64` per dimension, then the entries as
//! little-endian `f64` in row-major order (last axis fastest).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RPSFTNS1";

/// Largest rank accepted when reading.
pub const MAX_RANK: u32 = 32;

pub fn encode_tensor(tensor: &ArrayD<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * tensor.ndim() + 8 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    // Logical order, whatever the memory layout.
    for v in tensor.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<ArrayD<f64>> {
    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let overflow = || Error::DimOverflow {
        path: path.to_path_buf(),
    };
    if rank > MAX_RANK {
        return Err(overflow());
    }
    let header = 12 + 8 * rank as usize;
    if bytes.len() < header {
        return Err(truncated(header as u64));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut count: u64 = 1;
    for chunk in bytes[12..header].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        count = count.checked_mul(d).ok_or_else(overflow)?;
        shape.push(usize::try_from(d).map_err(|_| overflow())?);
    }
    let payload = count
        .checked_mul(8)
        .and_then(|p| p.checked_add(header as u64))
        .ok_or_else(overflow)?;
    if (bytes.len() as u64) < payload {
        return Err(truncated(payload));
    }
    if (bytes.len() as u64) > payload {
        return Err(Error::Parse(format!(
            "{}: {} trailing bytes after the tensor payload",
            path.display(),
            bytes.len() as u64 - payload
        )));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("payload length checked"))
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &ArrayD<f64>) -> Result<()> {
    write_atomic(path, &encode_tensor(tensor))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
