//! Output directory handling: overwrite guard, JSON and CSV writers, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

pub struct OutDir {
    pub path: PathBuf,
    pub force: bool,
}

impl OutDir {
    pub fn new(path: &Path, force: bool) -> Result<Self, CliError> {
        fs::create_dir_all(path)?;
        Ok(Self { path: path.to_path_buf(), force })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Fails before any work is done if a stage would overwrite its outputs.
    pub fn guard(&self, names: &[&str]) -> Result<(), CliError> {
        if self.force {
            return Ok(());
        }
        for n in names {
            let p = self.file(n);
            if p.exists() {
                return Err(CliError::Exists(p));
            }
        }
        Ok(())
    }

    pub fn require(&self, names: &[&str]) -> Result<(), CliError> {
        for n in names {
            let p = self.file(n);
            if !p.exists() {
                return Err(CliError::Missing(p));
            }
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.file(name), text)?;
        Ok(())
    }

    /// Plot-ready table with a header row.
    pub fn write_table(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.file(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rewrites the manifest: the resolved configuration and a SHA-256 for every other file.
    pub fn write_manifest(&self, cfg: &RunConfig) -> Result<(), CliError> {
        let mut names: Vec<String> = fs::read_dir(&self.path)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != MANIFEST)
            .collect();
        names.sort();
        let mut artifacts = Vec::with_capacity(names.len());
        for n in names {
            let bytes = fs::read(self.file(&n))?;
            artifacts.push(Artifact { sha256: format!("{:x}", Sha256::digest(&bytes)), bytes: bytes.len() as u64, file: n });
        }
        self.write_json(MANIFEST, &Manifest { config: cfg, artifacts })
    }
}

#[derive(Serialize)]
struct Artifact {
    file: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    artifacts: Vec<Artifact>,
}

/// Shortest round-trip representation, so tables are reproducible byte for byte.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        String::new()
    }
}
