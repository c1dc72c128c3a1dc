use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "run_manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Artifacts of one command, held in memory until every computation has
/// succeeded, then written file by file through a temp + rename.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Serialize)]
struct FileRecord<'a> {
    name: &'a str,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunInfo<'a, S: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub seeds: S,
    pub config_sha256: String,
    pub config: serde_json::Value,
    /// SHA-256 of the dataset manifest and matrices, when one was read.
    pub dataset_sha256: Option<String>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
        text.push('\n');
        self.add(name, text);
    }

    /// Write every artifact, then the run manifest listing their hashes.
    pub fn commit<S: Serialize>(mut self, dir: &Path, info: &RunInfo<S>) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let records: Vec<FileRecord> = self
            .files
            .iter()
            .map(|(name, bytes)| FileRecord {
                name,
                bytes: bytes.len(),
                sha256: sha256_hex(bytes),
            })
            .collect();
        let manifest = serde_json::json!({ "run": info, "outputs": records });
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        self.files.push((MANIFEST_FILE.to_string(), text.into_bytes()));

        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            write_atomic(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_error(path, e)
    })
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime("io", format!("i/o error on {}: {e}", path.display()))
}
