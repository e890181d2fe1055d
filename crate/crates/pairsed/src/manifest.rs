//! Run manifest: config hash, code version, and checksums of every emitted file.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode};
use crate::formats::{write_json, FormatError, FORMAT_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RunManifest {
    pub format_version: u32,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub files: Vec<FileEntry>,
}

/// Wall-clock bounds of a run; kept apart from the manifest so that the manifest is reproducible.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Timing {
    pub format_version: u32,
    pub start_unix: f64,
    pub end_unix: f64,
    pub elapsed_s: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON serialization of the resolved config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

pub fn file_entry(dir: &Path, name: &str) -> Result<FileEntry, FormatError> {
    let bytes = fs::read(dir.join(name))?;
    Ok(FileEntry {
        name: name.to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Checksums `files` (relative to `dir`) and writes the manifest.
pub fn write_manifest(
    dir: &Path,
    cfg: &ExperimentConfig,
    files: &[String],
) -> Result<RunManifest, FormatError> {
    let mut names: Vec<&String> = files.iter().collect();
    names.sort();
    names.dedup();
    let files = names
        .into_iter()
        .map(|n| file_entry(dir, n))
        .collect::<Result<Vec<_>, _>>()?;
    let m = RunManifest {
        format_version: FORMAT_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        mode: cfg.mode,
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

pub fn write_timing(dir: &Path, start_unix: f64) -> Result<(), FormatError> {
    let end = unix_now();
    write_json(
        &dir.join(TIMING_FILE),
        &Timing {
            format_version: FORMAT_VERSION,
            start_unix,
            end_unix: end,
            elapsed_s: end - start_unix,
        },
    )
}

/// Recomputes every checksum listed in a manifest; returns the names that do not match.
pub fn verify_manifest(dir: &Path, m: &RunManifest) -> Result<Vec<String>, FormatError> {
    let mut bad = Vec::new();
    for f in &m.files {
        if file_entry(dir, &f.name)? != *f {
            bad.push(f.name.clone());
        }
    }
    Ok(bad)
}
