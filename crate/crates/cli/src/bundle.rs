use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spotscape::data::io::atomic_write;

use crate::error::{CliError, CliResult};

pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory of one command. Files are written atomically and the
/// last content of every path ends up in the manifest.
#[derive(Debug)]
pub struct Bundle {
    root: PathBuf,
    files: BTreeMap<String, ManifestEntry>,
}

impl Bundle {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::usage(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `rel` uses `/` separators and is relative to the bundle root.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        self.put(rel, bytes).map_err(CliError::runtime)
    }

    /// `write` with the library's error type, for use inside callbacks.
    pub fn put(&mut self, rel: &str, bytes: &[u8]) -> spotscape::Result<()> {
        atomic_write(&self.root.join(rel), bytes)?;
        self.files.insert(
            rel.to_string(),
            ManifestEntry {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::runtime(e.into()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Writes `manifest.json` and returns it.
    pub fn finish(self) -> CliResult<Manifest> {
        let manifest = Manifest {
            files: self.files.into_values().collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::runtime(e.into()))?;
        bytes.push(b'\n');
        atomic_write(&self.root.join(MANIFEST_JSON), &bytes).map_err(CliError::runtime)?;
        Ok(manifest)
    }
}
