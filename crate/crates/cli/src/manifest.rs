//! Run manifests and atomic file output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mrta_core::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub timestamp_unix: u64,
    pub version: String,
    pub outputs: Vec<String>,
    /// Sweep cells that failed, as `method (N,M,P): error`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn new(config: &RunConfig, seed: u64) -> Self {
        RunManifest {
            command: std::env::args().collect(),
            seed,
            config_hash: config_hash(config),
            config: config.clone(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

/// SHA-256 of the canonical TOML rendering.
pub fn config_hash(config: &RunConfig) -> String {
    Sha256::digest(config.to_toml().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Output root from `MRTA_OUTPUT_ROOT`, or `runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os("MRTA_OUTPUT_ROOT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// `<root>/<command>-<unix seconds>` when no directory was given.
pub fn default_dir(command: &str) -> PathBuf {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    output_root().join(format!("{command}-{now}"))
}
