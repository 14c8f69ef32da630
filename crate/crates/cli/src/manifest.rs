//! Output files with provenance: hashes, seed and tool version.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Hash over several input files, in order, with their lengths as separators.
pub fn config_hash(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Creates `dir` and refuses to clobber any of `files` unless `force`.
pub fn prepare(dir: &Path, files: &[&str], force: bool) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if !force {
        for f in files {
            let p = dir.join(f);
            if p.exists() {
                bail!(lanesim::Error::Config(format!(
                    "{} exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: &'a str,
    pub invocation: &'a str,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, invocation: &'a str, config_hash: String, seed: u64) -> Self {
        Manifest {
            tool: "lanesim",
            tool_version: TOOL_VERSION,
            command,
            invocation,
            config_hash,
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_hash(path)?);
        Ok(())
    }

    /// Records the hash of a file already written under `dir`.
    pub fn output(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.outputs.insert(name.to_string(), file_hash(&dir.join(name))?);
        Ok(())
    }

    pub fn write(&self, path: PathBuf) -> Result<()> {
        write_json(&path, self)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn prepare_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x").unwrap();
        assert!(prepare(dir.path(), &["a.csv"], false).is_err());
        assert!(prepare(dir.path(), &["a.csv"], true).is_ok());
        assert!(prepare(dir.path(), &["b.csv"], false).is_ok());
    }
}
