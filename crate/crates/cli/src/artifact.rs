//! Artifact files with `<name>.manifest.json` sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Git-style object digest: SHA-256 over `"blob {len}\0"` followed by the bytes.
pub fn blob_digest(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    artifact: String,
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    bytes: usize,
    digest: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    notes: &'a BTreeMap<String, String>,
}

/// Writes artifacts for one command and stamps each with provenance.
pub struct Recorder {
    pub command: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub notes: BTreeMap<String, String>,
}

impl Recorder {
    pub fn new(command: &'static str, config_hash: String, seed: u64) -> Self {
        Recorder {
            command,
            config_hash,
            seed,
            notes: BTreeMap::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        path.with_file_name(name)
    }

    /// Stamps a file that some other routine already wrote.
    pub fn stamp(&self, path: &Path) -> Result<()> {
        let content = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let side = Sidecar {
            artifact: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            command: self.command,
            config_hash: &self.config_hash,
            seed: self.seed,
            bytes: content.len(),
            digest: blob_digest(&content),
            notes: &self.notes,
        };
        let mut json = serde_json::to_vec_pretty(&side)?;
        json.push(b'\n');
        let sp = Self::sidecar_path(path);
        fs::write(&sp, json).with_context(|| format!("writing {}", sp.display()))
    }

    pub fn write(&self, path: &Path, content: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
        self.stamp(path)
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(value)?;
        json.push(b'\n');
        self.write(path, &json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_git_object_hashing() {
        // git hash-object --object-format=sha256 on an empty file
        assert_eq!(
            blob_digest(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
