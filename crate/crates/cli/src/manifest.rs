//! Run manifests: the resolved configuration plus checksums of every file a
//! command read or wrote, written atomically once the run has finished.
//! Feeding the embedded `[config]` table back through the same command with
//! the same seed reproduces the run's artifacts byte for byte.

use crate::config::RunConfig;
use dram_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Read;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Tool name and version that produced the run.
    pub tool: String,
    pub command: String,
    pub seed: u64,
    /// Files read (paths as given), with content checksums.
    pub inputs: Vec<FileStamp>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<FileStamp>,
    /// Fully-resolved configuration; re-running the command on this table
    /// with the same seed reproduces the outputs.
    pub config: RunConfig,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

pub fn stamp(base: Option<&Path>, path: &Path) -> Result<FileStamp> {
    let full = match base {
        Some(b) => b.join(path),
        None => path.to_path_buf(),
    };
    Ok(FileStamp { path: path.display().to_string(), sha256: sha256_file(&full)? })
}

impl Manifest {
    /// Serialize and write to `<out>/manifest.toml` via a same-directory
    /// temporary file and rename, so a crash cannot leave a torn manifest.
    pub fn write(&self, out: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
        let tmp = out.join("manifest.toml.tmp");
        fs::write(&tmp, &text)?;
        fs::rename(&tmp, out.join("manifest.toml"))?;
        Ok(())
    }

    /// Load from a run directory (or a direct path to the file).
    pub fn load(path: &Path) -> Result<Manifest> {
        let path = if path.is_dir() { path.join("manifest.toml") } else { path.to_path_buf() };
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))
    }
}
