//! Staged artifact writing and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Everything needed to rerun a command: configuration, seed and input digests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub format: Format,
    /// How per-unit random streams derive from `seed`.
    pub seed_derivation: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub elapsed_seconds: f64,
}

/// Artifacts collected in memory and promoted into the output directory
/// only once the command has succeeded.
pub struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
    inputs: Vec<FileDigest>,
    config: serde_json::Value,
}

impl Artifacts {
    pub fn new() -> Self {
        Self {
            files: Vec::new(),
            inputs: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    pub fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn config<T: Serialize>(&mut self, value: &T) -> Result<()> {
        self.config = serde_json::to_value(value)?;
        Ok(())
    }

    /// Writes every file plus `manifest.json` into a staging directory
    /// inside `dir`, then renames them into place.
    pub fn commit(self, dir: &Path, mut manifest: RunManifest, started: Instant) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let staging = tempfile::Builder::new()
            .prefix(".ctrecon-staging-")
            .tempdir_in(dir)
            .context("creating staging directory")?;
        manifest.inputs = self.inputs;
        manifest.config = self.config;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let tmp = staging.path().join(name);
            if let Some(parent) = tmp.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
            manifest.outputs.push(FileDigest {
                path: name.display().to_string(),
                sha256: sha256_hex(bytes),
            });
            written.push(name.clone());
        }
        manifest.elapsed_seconds = started.elapsed().as_secs_f64();
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(staging.path().join("manifest.json"), bytes)?;
        written.push(PathBuf::from("manifest.json"));

        for name in &written {
            let target = dir.join(name);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::rename(staging.path().join(name), &target)
                .with_context(|| format!("promoting {}", target.display()))?;
        }
        Ok(written.into_iter().map(|n| dir.join(n)).collect())
    }
}
