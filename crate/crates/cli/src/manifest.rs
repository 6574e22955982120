//! `run_manifest.json`: what ran, on which inputs, producing which files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use aspect_core::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    /// Combined hash of every input the command read.
    pub input_sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub status: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub input_sha256: String,
    pub outputs: Vec<OutputEntry>,
    pub wall_time_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    out_dir: PathBuf,
    #[serde(skip)]
    started: Option<Instant>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Files under `path` (or `path` itself), sorted, with their hashes.
pub fn hash_tree(path: &Path) -> Result<Vec<FileHash>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(path) {
        let entry = entry.map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|f| Ok(FileHash { sha256: sha256_file(&f)?, path: f.display().to_string() }))
        .collect()
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, out_dir: &Path) -> Self {
        Self {
            command: command.into(),
            argv,
            status: "running".into(),
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            input_sha256: hex::encode(Sha256::digest(b"")),
            outputs: Vec::new(),
            wall_time_secs: 0.0,
            error: None,
            out_dir: out_dir.to_path_buf(),
            started: Some(Instant::now()),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.extend(hash_tree(path)?);
        let mut h = Sha256::new();
        for f in &self.inputs {
            h.update(f.path.as_bytes());
            h.update(f.sha256.as_bytes());
        }
        self.input_sha256 = hex::encode(h.finalize());
        Ok(())
    }

    /// Record a file already written inside the output directory.
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        for f in hash_tree(path)? {
            self.outputs.push(OutputEntry { path: f.path, sha256: f.sha256, input_sha256: self.input_sha256.clone() });
        }
        Ok(())
    }

    pub fn write(&mut self) -> Result<()> {
        if let Some(t) = self.started {
            self.wall_time_secs = t.elapsed().as_secs_f64();
        }
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::Io { path: self.out_dir.clone(), source: e })?;
        let path = self.out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&path, json).map_err(|e| Error::Io { path, source: e })
    }

    pub fn finish(&mut self, outcome: &Result<()>) -> Result<()> {
        match outcome {
            Ok(()) => self.status = "ok".into(),
            Err(e) => {
                self.status = "failed".into();
                self.error = Some(e.to_string());
            }
        }
        self.write()
    }
}
