//! Per-run record of what was run, with which settings, on which files.

use namerec_core::fingerprint::file_sha256;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Role -> path, for inputs and outputs.
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    /// Path -> SHA-256 of every file above that exists (directories hash
    /// their files in name order).
    pub fingerprints: BTreeMap<String, String>,
    pub exit_code: i32,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.to_string(), path.to_path_buf());
    }

    pub fn output(&mut self, role: &str, path: &Path) {
        self.outputs.insert(role.to_string(), path.to_path_buf());
    }

    pub fn fingerprint_all(&mut self) {
        let paths: Vec<PathBuf> = self.inputs.values().chain(self.outputs.values()).cloned().collect();
        for p in paths {
            if let Some(h) = fingerprint_path(&p) {
                self.fingerprints.insert(p.display().to_string(), h);
            }
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text)
    }
}

fn fingerprint_path(p: &Path) -> Option<String> {
    if p.is_file() {
        return file_sha256(p).ok();
    }
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(p).ok()?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        let mut h = namerec_core::fingerprint::FieldHasher::new();
        for e in entries.iter().filter(|e| e.is_file()) {
            h.field(e.file_name()?.as_encoded_bytes());
            h.field(file_sha256(e).ok()?.as_bytes());
        }
        return Some(h.finish());
    }
    None
}
