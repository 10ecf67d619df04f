use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputHash { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(bytes)) });
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(self, path: &Path) -> std::io::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        write_atomic(path, text.as_bytes())
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// `<path>.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
