//! Versioned weight blobs.
//!
//! Binary layout: magic `FLWB`, u32 version, u64 count, then `count`
//! little-endian f64 values. The JSON sidecar (`<blob>.json`) carries the
//! layout needed to interpret the numbers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"FLWB";
pub const BLOB_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BlobSidecar<M> {
    pub version: u32,
    pub count: usize,
    pub meta: M,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_blob<M: Serialize>(path: &Path, values: &[f64], meta: &M) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 8 * values.len());
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    let side = BlobSidecar {
        version: BLOB_VERSION,
        count: values.len(),
        meta,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_blob<M: DeserializeOwned>(path: &Path) -> Result<(Vec<f64>, M)> {
    let bytes = fs::read(path)?;
    let err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 16 || &bytes[0..4] != BLOB_MAGIC {
        return Err(err("missing FLWB magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(err(format!("unsupported blob version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 8 * count {
        return Err(err(format!("expected {count} values, file has {} bytes", bytes.len())));
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let side: BlobSidecar<M> = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if side.count != count {
        return Err(err("sidecar count disagrees with blob".into()));
    }
    Ok((values, side.meta))
}
