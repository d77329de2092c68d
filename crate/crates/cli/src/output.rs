//! Staged outputs and run manifests.
//!
//! Every command renders all of its files in memory first and only then
//! commits them, so a failing run leaves nothing behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    fn of(path: &Path, bytes: &[u8]) -> Self {
        FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: C,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Reads an input file and records its digest for the manifest.
pub fn read_input(path: &Path, inputs: &mut Vec<FileDigest>) -> Result<Vec<u8>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    inputs.push(FileDigest::of(path, &bytes));
    Ok(bytes)
}

/// Resolves relative output paths against the output directory.
pub fn resolve(out_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        out_dir.join(path)
    }
}

#[derive(Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// Adds the manifest at `manifest_path`, then writes every file.
    pub fn commit_with_manifest<C: Serialize>(
        mut self,
        command: &'static str,
        config: C,
        inputs: Vec<FileDigest>,
        manifest_path: PathBuf,
    ) -> Result<(), CliError> {
        let manifest = RunManifest {
            tool: "odl",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs,
            outputs: self
                .files
                .iter()
                .map(|(p, b)| FileDigest::of(p, b))
                .collect(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        json.push(b'\n');
        self.add(manifest_path, json);
        self.commit()
    }

    /// Writes all files to temporaries first and renames them into place
    /// only once every write has succeeded.
    fn commit(self) -> Result<(), CliError> {
        let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
        let mut staged = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
                _ => PathBuf::from("."),
            };
            fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
            let mut tmp = NamedTempFile::new_in(&dir).map_err(|e| io(path, e))?;
            tmp.write_all(bytes).map_err(|e| io(path, e))?;
            tmp.as_file().sync_all().map_err(|e| io(path, e))?;
            staged.push((tmp, path));
        }
        for (tmp, path) in staged {
            tmp.persist(path).map_err(|e| io(path, e.error))?;
        }
        Ok(())
    }
}
