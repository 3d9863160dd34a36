use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CliError, RunConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subcommand: String,
    pub files: Vec<ManifestEntry>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn file_name(subcommand: &str) -> String {
        format!("manifest_{subcommand}.json")
    }
}

/// Tracks every file a subcommand writes so the manifest can hash them.
pub(crate) struct OutputDir {
    dir: PathBuf,
    subcommand: &'static str,
    config: RunConfig,
    files: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn new(dir: PathBuf, subcommand: &'static str, config: &RunConfig) -> Result<Self, CliError> {
        Ok(Self { dir, subcommand, config: config.clone(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Path of an upstream output, or an error naming the producer.
    pub fn require(&self, name: &str, producer: &'static str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::Dependency { file: p.display().to_string(), subcommand: producer })
        }
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display())))?;
        self.record(name, bytes);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Registers a file written by other code.
    pub fn record_existing(&mut self, name: &str) -> Result<(), CliError> {
        let bytes = std::fs::read(self.path(name))?;
        self.record(name, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.retain(|f| f.name != name);
        self.files.push(ManifestEntry {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
    }

    pub fn finish(mut self) -> Result<Manifest, CliError> {
        let config = self.config.clone();
        self.write_json(&format!("config_{}.json", self.subcommand), &config)?;
        self.files.sort_by(|a, b| a.name.cmp(&b.name));
        let manifest = Manifest { subcommand: self.subcommand.to_string(), files: self.files, config };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let p = self.dir.join(Manifest::file_name(self.subcommand));
        std::fs::write(&p, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display())))?;
        Ok(manifest)
    }
}
