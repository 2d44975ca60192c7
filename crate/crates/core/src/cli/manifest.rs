use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{LabError, Result};

#[derive(Debug, Serialize)]
struct OutputEntry {
    path: String,
    bytes: u64,
}

#[derive(Debug, Serialize)]
struct ManifestFile<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a Value,
    outputs: Vec<OutputEntry>,
    summary: &'a Value,
}

/// Files produced by one stage, recorded next to them as
/// `<command>.manifest.json`. Paths are stored relative to that directory
/// and nothing time-dependent is written, so reruns are byte-identical.
#[derive(Debug)]
pub struct Manifest {
    pub command: String,
    pub dir: PathBuf,
    pub seed: u64,
    pub config: Value,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

impl Manifest {
    pub fn new(command: &str, dir: &Path, seed: u64, config: Value) -> Self {
        Manifest {
            command: command.to_string(),
            dir: dir.to_path_buf(),
            seed,
            config,
            outputs: Vec::new(),
            summary: Value::Null,
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(format!("{}.manifest.json", self.command))
    }

    fn relative(&self, p: &Path) -> String {
        let rel = p.strip_prefix(&self.dir).unwrap_or(p);
        rel.to_string_lossy().replace('\\', "/")
    }

    pub fn write(&self) -> Result<PathBuf> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            let bytes = std::fs::metadata(p).map_err(|e| LabError::io(p, e))?.len();
            if bytes == 0 {
                return Err(LabError::Undefined(format!("output {} is empty", p.display())));
            }
            outputs.push(OutputEntry { path: self.relative(p), bytes });
        }
        let file = ManifestFile {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            seed: self.seed,
            config: &self.config,
            outputs,
            summary: &self.summary,
        };
        let path = self.path();
        super::run::write_json(&path, &file)?;
        Ok(path)
    }
}
