//! Provenance sidecars: `<artifact>.prov.json` beside every output.
//!
//! A record names the command, the toolkit version, the seed and the
//! SHA-256 of each input. It holds no timestamps or absolute paths, so
//! replaying a command reproduces it byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            tool: "spikekit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            inputs: Vec::new(),
            config,
        }
    }

    /// Records the digest of a file, or of every file under a directory.
    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(InputDigest {
            name: display_name(path),
            sha256: hash_path(path)?,
        });
        Ok(self)
    }

    pub fn inputs<'a>(mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<Self> {
        for p in paths {
            self = self.input(p)?;
        }
        Ok(self)
    }

    pub fn write_for(&self, artifact: &Path) -> Result<PathBuf> {
        let path = sidecar_path(artifact);
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".prov.json");
    artifact.with_file_name(name)
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of a file, or of a directory's sorted file names and contents
/// (provenance sidecars excluded).
pub fn hash_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return hash_file(path);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("listing {}", path.display()))?;
    entries.sort();
    let mut h = Sha256::new();
    for e in entries {
        let name = display_name(&e);
        if name.ends_with(".prov.json") {
            continue;
        }
        h.update(name.as_bytes());
        h.update(hash_path(&e)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
