use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use redense::redense::GuaranteeReport;

use crate::CliError;

/// `<dir>/<subcommand>.manifest.json`, so runs sharing an output directory
/// keep separate manifests.
pub fn manifest_path(dir: &Path, subcommand: &str) -> PathBuf {
    dir.join(format!("{subcommand}.manifest.json"))
}

/// Everything needed to replay a run: the parsed flags, the seed, and
/// digests of every file written.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub flags: serde_json::Value,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: BTreeMap<String, PathBuf>,
    /// SHA-256 of each output file, keyed like `outputs`.
    pub sha256: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    pub report: Option<GuaranteeReport>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(subcommand: &str, argv: Vec<String>, flags: serde_json::Value, seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            argv,
            flags,
            seed,
            started_unix_ms: unix_ms(),
            finished_unix_ms: 0,
            outputs: BTreeMap::new(),
            sha256: BTreeMap::new(),
            metrics: BTreeMap::new(),
            report: None,
        }
    }

    /// Writes `bytes` to `path` and records the file under `key`.
    pub fn write_output(&mut self, key: &str, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.record(key, path)
    }

    /// Records a file that some other writer already produced.
    pub fn record(&mut self, key: &str, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.outputs.insert(key.to_string(), path.to_path_buf());
        self.sha256.insert(key.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn save(&mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.finished_unix_ms = unix_ms();
        let path = manifest_path(dir, &self.subcommand);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}
