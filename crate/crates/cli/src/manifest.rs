//! Run manifests: every command writes one, recording what ran, on which
//! inputs (by digest), with which seeds, and what it produced.

use mmprl::{Error, Result};
use serde::Serialize;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_path: Option<String>,
    pub config_digest: Option<String>,
    pub archive_path: Option<String>,
    pub archive_digest: Option<String>,
    pub seed: u64,
    pub batch_seeds: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: None,
            config_digest: None,
            archive_path: None,
            archive_digest: None,
            seed,
            batch_seeds: None,
            started_unix: unix_now(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        self.outputs.push(path.display().to_string());
        let text = toml::to_string_pretty(&self)
            .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// FNV-1a over a byte slice; cheap, stable content fingerprint.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}
