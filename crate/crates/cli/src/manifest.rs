//! Run directories and their manifests.
//!
//! Every command writes into a fresh `<output_dir>/<command>-<seed>-<k>`
//! directory, `k` being the first unused index, so earlier runs are never
//! touched. `manifest.json` records the resolved config, the seeds, the
//! crate versions and SHA-256 digests of every input and output file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Creates the first free `<command>-<seed>-<k>` directory under `root`.
pub fn create_run_dir(root: &Path, command: &str, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
    for k in 0.. {
        let dir = root.join(format!("{command}-{seed}-{k}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!("run index space exhausted")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub versions: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    /// The resolved run configuration, when the command takes one.
    pub config: Option<serde_json::Value>,
    /// Command-line arguments that are not part of the config.
    pub arguments: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the run directory.
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let versions = [
            ("comir", env!("CARGO_PKG_VERSION").to_string()),
            ("checkpoint_format", comir::encoder::CHECKPOINT_VERSION.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Manifest {
            command: command.to_string(),
            versions,
            seeds: BTreeMap::new(),
            config: None,
            arguments: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn argument(mut self, name: &str, value: impl ToString) -> Self {
        self.arguments.insert(name.to_string(), value.to_string());
        self
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Hashes every output under `run_dir` (except the manifest) and writes
    /// the manifest there.
    pub fn finish(mut self, run_dir: &Path) -> Result<PathBuf> {
        let mut files = Vec::new();
        collect_files(run_dir, &mut files)?;
        files.sort();
        self.outputs = files
            .into_iter()
            .filter(|p| p.file_name().is_none_or(|n| n != MANIFEST_FILE))
            .map(|p| {
                let mut d = FileDigest::of(&p)?;
                d.path = p.strip_prefix(run_dir).unwrap_or(&p).to_path_buf();
                Ok(d)
            })
            .collect::<Result<_>>()?;
        let path = run_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
