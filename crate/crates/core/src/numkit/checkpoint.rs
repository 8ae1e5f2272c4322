//! Tensor container format.
//!
//! Layout: one line of compact JSON (the manifest) terminated by `\n`,
//! followed by every tensor's values as little-endian `f64`, concatenated in
//! manifest order. Offsets in the manifest are byte offsets into that blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Ordered named tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl TensorFile {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            tensors: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 8 * t.len() as u64;
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            tensors: entries,
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&manifest)?;
        out.push(b'\n');
        out.reserve(offset as usize);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decode; `path` is used only to label errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "no manifest terminator"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::format(path, format!("bad manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!(
                    "format version {} (expected {FORMAT_VERSION})",
                    manifest.format_version
                ),
            ));
        }
        let blob = &bytes[nl + 1..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            if end > blob.len() {
                return Err(Error::format(
                    path,
                    format!(
                        "tensor {} needs blob bytes [{start}, {end}) but blob has {} bytes",
                        e.name,
                        blob.len()
                    ),
                ));
            }
            let data = blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(e.shape.clone(), data)
                .map_err(|err| Error::format(path, format!("tensor {}: {err}", e.name)))?;
            tensors.push((e.name.clone(), t));
        }
        Ok(Self {
            tensors,
            meta: manifest.meta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::format(path, "file not found"),
            _ => Error::io(path, e),
        })?;
        Self::from_bytes(&bytes, path)
    }
}
