// SPDX-License-Identifier: MIT OR Apache-2.0

//! Provenance records: effective config, seed and artifact hashes, written
//! next to every run's outputs. No timestamps, so identical runs produce
//! identical provenance files.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    /// Artifact file name to SHA-256 hex digest.
    pub artifacts: std::collections::BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::config("IoFailure", format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

impl Provenance {
    pub fn new(subcommand: &str, config: Value, seed: Option<u64>) -> Self {
        Provenance {
            subcommand: subcommand.to_string(),
            config,
            seed,
            artifacts: Default::default(),
        }
    }

    pub fn add_artifact(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.artifacts.insert(name, sha256_file(path)?);
        Ok(())
    }

    /// Write `provenance.json` into `dir` (or `<stem>.provenance.json` next
    /// to a file artifact via [`Provenance::write_sibling`]).
    pub fn write_into(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("provenance.json");
        self.write_to(&path)?;
        Ok(path)
    }

    pub fn write_sibling(&self, artifact: &Path) -> Result<PathBuf, CliError> {
        let stem = artifact
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string());
        let path = artifact
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(format!("{stem}.provenance.json"));
        self.write_to(&path)?;
        Ok(path)
    }

    fn write_to(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::config("MalformedJson", e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| CliError::config("IoFailure", format!("{}: {e}", path.display())))?;
        Ok(())
    }
}
