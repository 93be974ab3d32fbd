//! Run manifests: a reproducibility record of which experiment produced
//! which bytes. No timestamps, no hostnames; reruns of the same config
//! and seed must produce the identical manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Resolved;
use crate::csvout::write_atomic;

pub const CHECKPOINT_FORMAT_VERSION: u32 = crate::checkpoint::FORMAT_VERSION;

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub tool_version: &'static str,
    pub checkpoint_format_version: u32,
    pub outputs: Vec<OutputRecord>,
}

/// Collects output files for one run and writes `manifest_<command>.json`
/// next to them. Every artifact goes to disk through [`Emitter::emit`],
/// which both writes atomically and records the digest.
pub struct Emitter {
    out_dir: PathBuf,
    manifest: Manifest,
}

impl Emitter {
    pub fn new(command: &str, resolved: &Resolved) -> Result<Self> {
        let canonical = serde_json::to_vec(resolved).context("serializing resolved config")?;
        std::fs::create_dir_all(&resolved.output_dir)
            .with_context(|| format!("creating {}", resolved.output_dir.display()))?;
        Ok(Emitter {
            out_dir: resolved.output_dir.clone(),
            manifest: Manifest {
                command: command.to_string(),
                seed: resolved.seed,
                config_sha256: sha256_hex(&canonical),
                tool_version: env!("CARGO_PKG_VERSION"),
                checkpoint_format_version: CHECKPOINT_FORMAT_VERSION,
                outputs: Vec::new(),
            },
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Write one artifact atomically and record its digest.
    pub fn emit(&mut self, file_name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(file_name);
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.outputs.push(OutputRecord { path: file_name.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    /// Write the manifest itself, closing out the run.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let name = format!("manifest_{}.json", self.manifest.command);
        let path = self.out_dir.join(name);
        let mut body = serde_json::to_string_pretty(&self.manifest).context("serializing manifest")?;
        body.push('\n');
        write_atomic(&path, body.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn same_experiment_different_out_dirs_hash_identically() {
        let a = ExperimentConfig::default_with_seed(3)
            .resolve(None, Some(PathBuf::from("/tmp/a")))
            .unwrap();
        let b = ExperimentConfig::default_with_seed(3)
            .resolve(None, Some(PathBuf::from("/tmp/b")))
            .unwrap();
        let ea = Emitter::new("x", &a).unwrap();
        let eb = Emitter::new("x", &b).unwrap();
        assert_eq!(ea.manifest.config_sha256, eb.manifest.config_sha256);
    }

    #[test]
    fn emitted_files_land_in_the_manifest_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let resolved = ExperimentConfig::default_with_seed(1)
            .resolve(None, Some(dir.path().to_path_buf()))
            .unwrap();
        let mut e = Emitter::new("t", &resolved).unwrap();
        e.emit("b.csv", b"x\n").unwrap();
        e.emit("a.csv", b"y\n").unwrap();
        let path = e.finish().unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let a = text.find("a.csv").unwrap();
        let b = text.find("b.csv").unwrap();
        assert!(a < b);
        assert!(!text.contains("time"), "manifests must not carry timestamps");
    }
}
