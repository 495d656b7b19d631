//! `manifest.json`: the resolved configuration plus a checksum of every
//! artifact of a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_error, CliError};
use crate::run::{json_bytes, write_file};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    /// Relative path (forward slashes) to lowercase hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn key(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Hashes `files` (relative to `dir`) and writes the manifest next to them.
pub fn write_manifest(dir: &Path, cfg: &RunConfig, files: &[PathBuf]) -> Result<Manifest, CliError> {
    let artifacts = files
        .iter()
        .map(|f| Ok((key(f), sha256_file(&dir.join(f))?)))
        .collect::<Result<BTreeMap<_, _>, CliError>>()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.resolved_json(),
        artifacts,
    };
    write_file(&dir.join(MANIFEST_FILE), &json_bytes(&manifest))?;
    Ok(manifest)
}
