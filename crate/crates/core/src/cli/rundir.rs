//! Run directories: every artifact is written through [`RunDir`], which
//! records it in `manifest.json` with its size and SHA-256.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SNAPSHOT: &str = "config.snapshot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    /// Absent for the manifest itself.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config_sha256: String,
    /// Hashes of files read by the run (checkpoints, corpora, annotations).
    pub inputs: Vec<FileEntry>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<FileEntry> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileEntry {
        path: path.display().to_string(),
        bytes: data.len() as u64,
        sha256: Some(sha256_hex(&data)),
    })
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct RunDir {
    root: PathBuf,
    command: String,
    argv: Vec<String>,
    seed: u64,
    config_sha256: String,
    inputs: Vec<FileEntry>,
    started: u64,
    files: Vec<FileEntry>,
}

impl RunDir {
    /// Creates (or reuses) `root` and writes the config snapshot.
    pub fn create(root: impl Into<PathBuf>, command: &str, argv: Vec<String>, seed: u64, snapshot: &str) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let mut dir = Self {
            root,
            command: command.to_owned(),
            argv,
            seed,
            config_sha256: sha256_hex(snapshot.as_bytes()),
            inputs: Vec::new(),
            started: now(),
            files: Vec::new(),
        };
        dir.write(SNAPSHOT, snapshot)?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, contents.as_ref()).map_err(|e| Error::io(&path, e))?;
        self.record(name)?;
        Ok(path)
    }

    /// Registers a file that was written into the run directory by other code.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let mut entry = hash_file(&self.path(name))?;
        entry.path = name.to_owned();
        self.files.retain(|f| f.path != name);
        self.files.push(entry);
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut files = self.files;
        files.push(FileEntry {
            path: MANIFEST.into(),
            bytes: 0,
            sha256: None,
        });
        let manifest = RunManifest {
            command: self.command,
            argv: self.argv,
            seed: self.seed,
            config_sha256: self.config_sha256,
            inputs: self.inputs,
            started_unix: self.started,
            finished_unix: now(),
            files,
        };
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}
