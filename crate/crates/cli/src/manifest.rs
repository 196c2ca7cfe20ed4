use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Provenance record written next to the primary output of every command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_time_seconds: f64,
}

/// Collects the files a command touches and writes its manifest at the end.
pub struct Run {
    command: &'static str,
    params: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    pub fn start<P: Serialize>(command: &'static str, params: &P) -> Self {
        Self {
            command,
            params: serde_json::to_value(params).unwrap_or(serde_json::Value::Null),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Reads an input file, remembering its digest.
    pub fn read(&mut self, path: &Path) -> CliResult<String> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        });
        Ok(text)
    }

    pub fn write(&mut self, path: &Path, contents: &[u8]) -> CliResult<()> {
        fs::write(path, contents).map_err(|e| CliError::io(path, e))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Writes `<first output>.manifest.json`; does nothing if no file was written.
    pub fn finish(self) -> CliResult<Option<PathBuf>> {
        let Some(primary) = self.outputs.first() else {
            return Ok(None);
        };
        let outputs = self
            .outputs
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<CliResult<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command,
            params: self.params,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            inputs: self.inputs,
            outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = manifest_path(primary);
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::invalid(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(Some(path))
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name: OsString = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
