//! Manifest + blob tensor archives.
//!
//! `<stem>.json` holds a JSON manifest `{meta, tensors: [{name, shape, offset}]}`
//! and `<stem>.bin` holds the tensors back to back as little-endian IEEE-754
//! float64. Offsets are in bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub meta: serde_json::Value,
    pub tensors: Vec<ManifestEntry>,
}

/// Path of the binary blob that sits next to a manifest.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_archive<'a>(
    manifest_path: &Path,
    meta: serde_json::Value,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in tensors {
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        meta,
        tensors: entries,
    };
    if let Some(dir) = manifest_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(manifest_path, text + "\n").map_err(|e| Error::io(manifest_path, e))?;
    let bp = blob_path(manifest_path);
    fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))?;
    Ok(())
}

/// Loads every tensor in manifest order.
pub fn load_archive(manifest_path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let corrupt = |detail: String| Error::Corrupt {
        path: manifest_path.to_path_buf(),
        detail,
    };
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("malformed manifest: {e}")))?;
    let bp = blob_path(manifest_path);
    let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;

    let mut out = Vec::with_capacity(manifest.tensors.len());
    let mut expected_offset = 0u64;
    for entry in manifest.tensors {
        if entry.offset != expected_offset {
            return Err(corrupt(format!(
                "tensor '{}' at offset {} but expected {}",
                entry.name, entry.offset, expected_offset
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 8;
        if end > blob.len() {
            return Err(Error::Corrupt {
                path: bp.clone(),
                detail: format!(
                    "truncated blob: tensor '{}' needs bytes {start}..{end}, blob has {}",
                    entry.name,
                    blob.len()
                ),
            });
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        out.push((entry.name, Tensor::new(entry.shape, data)?));
        expected_offset = end as u64;
    }
    if (expected_offset as usize) != blob.len() {
        return Err(Error::Corrupt {
            path: bp,
            detail: format!(
                "blob has {} trailing bytes",
                blob.len() - expected_offset as usize
            ),
        });
    }
    Ok((manifest.meta, out))
}
