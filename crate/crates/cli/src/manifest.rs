//! Run manifests: what a command was asked to do and checksums of what it
//! wrote.
//!
//! A manifest is JSON with `format` (`"hand3r-run"`), `version` (1),
//! `command`, the resolved `config` and its SHA-256 `config_hash` (over
//! the compact JSON encoding), optional `seed`, `dataset` and
//! `checkpoint` paths, RFC 3339 `started`/`finished` timestamps and an
//! `artifacts` list of `{path, bytes, sha256}` with paths relative to the
//! manifest's directory. Artifacts are byte-deterministic for a given
//! config; the manifest itself is not, because of the timestamps.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT: &str = "hand3r-run";
pub const VERSION: u32 = 1;
/// File name of the manifest of a directory-producing command.
pub const MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub started: String,
    pub finished: String,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((bytes.len() as u64, sha256_hex(&bytes)))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

impl RunManifest {
    /// A manifest with no artifacts yet; `config` is hashed as given.
    pub fn begin<C: Serialize>(command: &str, config: &C) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            format: FORMAT.into(),
            version: VERSION,
            command: command.into(),
            config,
            config_hash,
            seed: None,
            dataset: None,
            checkpoint: None,
            started: now(),
            finished: String::new(),
            artifacts: Vec::new(),
        }
    }

    /// Records `files` (relative to `base`), in the given order.
    pub fn add_artifacts(&mut self, base: &Path, files: &[PathBuf]) -> Result<()> {
        for rel in files {
            let (bytes, sha256) = file_sha256(&base.join(rel))?;
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            self.artifacts.push(Artifact { path, bytes, sha256 });
        }
        Ok(())
    }

    /// Recomputes every checksum under `base`.
    pub fn verify(&self, base: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = base.join(&a.path);
            let (bytes, sha) = file_sha256(&path)?;
            if bytes != a.bytes || sha != a.sha256 {
                bail!("checksum mismatch for {}", path.display());
            }
        }
        Ok(())
    }

    /// Stamps `finished`, writes the manifest to `path`, then re-verifies
    /// the artifacts against the written file.
    pub fn finish(mut self, path: &Path) -> Result<Self> {
        self.finished = now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        let back = Self::load(path)?;
        back.verify(path.parent().unwrap_or(Path::new(".")))?;
        Ok(back)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.format != FORMAT || m.version != VERSION {
            bail!("{}: not a version {VERSION} {FORMAT} manifest", path.display());
        }
        Ok(m)
    }

    /// `(path, sha256)` pairs, the reproducible part of a run.
    pub fn checksums(&self) -> Vec<(String, String)> {
        self.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())).collect()
    }
}

/// Every file under `dir`, relative and sorted, skipping run manifests.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path.file_name().is_some_and(|n| n != MANIFEST) {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}
