//! Run manifests written next to each command's main output.
//!
//! The digest is SHA-256 over the command name, the sorted non-output flags
//! and the bytes of every input file (directories are walked in sorted
//! order). Output paths and timestamps are left out, so identical inputs
//! and settings give identical digests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub digest: String,
    pub tool_version: String,
    pub flags: Vec<(String, String)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub struct ManifestBuilder {
    command: String,
    flags: Vec<(String, String)>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            flags: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now_ms(),
        }
    }

    pub fn flag(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.flags.push((name.to_string(), value.to_string()));
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.flags.sort();
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(self.command.as_bytes());
        for (k, v) in &self.flags {
            field(k.as_bytes());
            field(v.as_bytes());
        }
        for input in &self.inputs {
            for (rel, bytes) in read_tree(input)? {
                field(rel.as_bytes());
                field(&bytes);
            }
        }
        Ok(RunManifest {
            command: self.command,
            digest: hex::encode(h.finalize()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            flags: self.flags,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        })
    }
}

/// `(relative name, contents)` for a file, or for every file under a
/// directory in sorted order.
fn read_tree(root: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let err = |p: &Path, e: std::io::Error| Failure::data(format!("{}: {e}", p.display()));
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        let meta = fs::metadata(&p).map_err(|e| err(&p, e))?;
        if meta.is_dir() {
            let mut children: Vec<PathBuf> = fs::read_dir(&p)
                .map_err(|e| err(&p, e))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()
                .map_err(|e| err(&p, e))?;
            children.sort();
            stack.extend(children.into_iter().rev());
        } else {
            let rel = p
                .strip_prefix(root)
                .unwrap_or(&p)
                .to_string_lossy()
                .into_owned();
            out.push((rel, fs::read(&p).map_err(|e| err(&p, e))?));
        }
    }
    Ok(out)
}

/// `<output>.manifest.json` beside the output file or directory.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "run".into());
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn write(manifest: &RunManifest, primary_output: &Path) -> Result<PathBuf> {
    let path = manifest_path(primary_output);
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    maha_core::featureio::write_atomic(&path, &bytes)?;
    Ok(path)
}
