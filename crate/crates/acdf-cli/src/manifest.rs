//! Output manifests: every command records what it wrote, with SHA-256
//! content hashes, so reruns can be compared byte-for-byte.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";
/// Wall-clock reports vary run to run and are kept out of the manifest.
pub const TIMING_NAME: &str = "timing.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        total += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok((format!("{:x}", hasher.finalize()), total))
}

/// Build a manifest over explicit files (paths relative to `root`),
/// write it as `manifest.json` in `root`, and return it.
pub fn write_manifest(root: &Path, command: &str, rel_paths: &[PathBuf]) -> Result<Manifest> {
    let mut files = Vec::with_capacity(rel_paths.len());
    let mut sorted: Vec<&PathBuf> = rel_paths.iter().collect();
    sorted.sort();
    for rel in sorted {
        let (sha256, bytes) = sha256_file(&root.join(rel))?;
        files.push(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256,
            bytes,
        });
    }
    let manifest = Manifest {
        command: command.to_string(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(root.join(MANIFEST_NAME), text)?;
    Ok(manifest)
}

/// Tracks files as a command writes them, for the closing manifest.
pub struct OutputTracker {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputTracker {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("creating output dir {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Absolute path for a relative output, recorded for the manifest.
    pub fn path(&mut self, rel: impl Into<PathBuf>) -> Result<PathBuf> {
        let rel = rel.into();
        let abs = self.root.join(&rel);
        if let Some(parent) = abs.parent() {
            fs::create_dir_all(parent)?;
        }
        self.written.push(rel);
        Ok(abs)
    }

    /// Absolute path for an output excluded from the manifest (e.g. timing).
    pub fn unhashed_path(&self, rel: impl Into<PathBuf>) -> Result<PathBuf> {
        let abs = self.root.join(rel.into());
        if let Some(parent) = abs.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(abs)
    }

    /// Write the resolved config next to the outputs (hashed: it is part of
    /// the reproducibility contract).
    pub fn write_resolved_config(&mut self, config: &crate::config::RunConfig) -> Result<()> {
        let path = self.path("config.resolved.json")?;
        fs::write(path, config.to_pretty_json())?;
        Ok(())
    }

    pub fn finish(self, command: &str) -> Result<Manifest> {
        write_manifest(&self.root, command, &self.written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_hashes_every_tracked_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut tracker = OutputTracker::new(dir.path()).unwrap();
        fs::write(tracker.path("a.txt").unwrap(), b"alpha").unwrap();
        fs::write(tracker.path("sub/b.txt").unwrap(), b"beta").unwrap();
        fs::write(tracker.unhashed_path(TIMING_NAME).unwrap(), b"{}").unwrap();
        let manifest = tracker.finish("test").unwrap();
        assert_eq!(manifest.files.len(), 2);
        assert!(manifest.files.iter().all(|f| f.sha256.len() == 64));
        assert!(manifest.files.iter().any(|f| f.path == "sub/b.txt"));
        // Stable order, and the timing file stays out.
        assert_eq!(manifest.files[0].path, "a.txt");
        assert!(dir.path().join(MANIFEST_NAME).exists());
    }

    #[test]
    fn identical_content_hashes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("x1");
        let p2 = dir.path().join("x2");
        fs::write(&p1, b"same bytes").unwrap();
        fs::write(&p2, b"same bytes").unwrap();
        assert_eq!(sha256_file(&p1).unwrap(), sha256_file(&p2).unwrap());
    }
}
