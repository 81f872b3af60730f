//! Run manifests written next to every command's primary output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use styleforge::Error;

use crate::config::ResolvedValue;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: BTreeMap<String, ResolvedValue>,
    pub threads: usize,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
}

pub fn digest_file(path: &Path) -> Result<InputDigest, Error> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buffer = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buffer).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buffer[..n]);
        bytes += n as u64;
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    config: BTreeMap<String, ResolvedValue>,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
    started: SystemTime,
    clock: Instant,
}

impl Recorder {
    /// The manifest is written beside `primary`, the command's main output.
    pub fn new(command: &str, config: BTreeMap<String, ResolvedValue>, primary: &Path) -> Self {
        Self {
            command: command.to_owned(),
            config,
            inputs: Vec::new(),
            outputs: vec![primary.to_owned()],
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Error> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        if !self.outputs.iter().any(|p| p == path) {
            self.outputs.push(path.to_owned());
        }
    }

    /// Writes `<primary>.manifest.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf, Error> {
        let primary = &self.outputs[0];
        let mut name = primary.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = primary.with_file_name(name);
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: self.config,
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            started_unix_seconds: self
                .started
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            wall_clock_seconds: self.clock.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
