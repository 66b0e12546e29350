//! File output helpers: atomic writes, sidecar metadata, config hashing.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a temp file in the same directory and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `<path>.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the canonical (compact, field-ordered) JSON encoding.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable config"))
}

/// Metadata sidecar carried by every output file.
#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct OutputMeta {
    pub kind: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
}

impl OutputMeta {
    pub fn new<C: Serialize>(kind: &str, config: &C, seeds: Vec<u64>) -> Self {
        Self {
            kind: kind.to_string(),
            config_hash: config_hash(config),
            seeds,
            config: serde_json::to_value(config).expect("serializable config"),
        }
    }
}

/// Writes `bytes` and a metadata sidecar next to it.
pub fn write_with_sidecar(path: &Path, bytes: &[u8], meta: &OutputMeta) -> Result<()> {
    atomic_write(path, bytes)?;
    write_json(&sidecar_path(path), meta)
}
