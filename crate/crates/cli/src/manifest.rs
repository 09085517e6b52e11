use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Run metadata written next to the CSVs. Timing fields live only here so
/// that CSV bodies stay byte-identical across reruns.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_sha256: Option<String>,
    pub seeds: Vec<u64>,
    pub threads: Option<usize>,
    pub version: &'static str,
    pub wall_time_secs: f64,
    pub timestamp: String,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<serde_json::Value>,
}

impl Manifest {
    pub fn new(command: impl Into<String>, seeds: Vec<u64>, threads: Option<usize>) -> Self {
        Self {
            command: command.into(),
            config_path: None,
            config_sha256: None,
            seeds,
            threads,
            version: gdcv_version(),
            wall_time_secs: 0.0,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            files: Vec::new(),
            timings: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            acceptance: None,
        }
    }

    pub fn with_config(mut self, path: &Path, bytes: &[u8]) -> Self {
        self.config_path = Some(path.to_path_buf());
        self.config_sha256 = Some(sha256_hex(bytes));
        self
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn gdcv_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
