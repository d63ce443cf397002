//! Small persistence helpers shared by the dataset, model and report writers.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// On-disk format version for every CSV/JSON artifact written by this crate.
pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 of the compact JSON encoding of `value`, hex encoded.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Metadata written next to every artifact as `<name>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar<T> {
    pub format: String,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub content: T,
}

impl<T: Serialize + DeserializeOwned> Sidecar<T> {
    pub fn new(format: &str, config_hash: String, seed: u64, content: T) -> Self {
        Self {
            format: format.to_string(),
            format_version: FORMAT_VERSION,
            config_hash,
            seed,
            content,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path, format: &str) -> Result<Self> {
        let sidecar: Self = read_json(path)?;
        if sidecar.format != format {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected format `{format}`, found `{}`", sidecar.format),
            });
        }
        if sidecar.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported format version {} (expected {FORMAT_VERSION})",
                    sidecar.format_version
                ),
            });
        }
        Ok(sidecar)
    }
}

/// Path of the sidecar for `artifact`: `data/primary.csv` → `data/primary.meta.json`.
pub fn sidecar_path(artifact: &Path) -> std::path::PathBuf {
    artifact.with_extension("meta.json")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
