//! Run manifests and content checksums.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use signedcf::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREPARE_MANIFEST_FILE: &str = "prepare.json";

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest over `name\0sha256\n` entries of every regular file directly in
/// `dir` except `skip`, in name order.
pub fn sha256_dir(dir: &Path, skip: &[&str]) -> Result<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !skip.contains(&n.as_str()))
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update([0]);
        h.update(sha256_file(&dir.join(&n))?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written by `prepare` next to the dataset files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrepareManifest {
    pub version: String,
    pub input: PathBuf,
    pub input_sha256: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub malformed_lines: usize,
    pub duplicate_lines: usize,
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FoldArtifacts {
    pub fold: usize,
    pub checkpoint: PathBuf,
    pub embeddings: PathBuf,
    pub log: PathBuf,
    pub best_epoch: Option<usize>,
    pub best_recall_at_10: Option<f64>,
    pub secs_per_epoch: Option<f64>,
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub dataset_dir: PathBuf,
    pub dataset_sha256: String,
    pub threads: Option<usize>,
    pub folds: Vec<FoldArtifacts>,
}

impl RunManifest {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    /// Artifact paths are stored relative to the run directory.
    pub fn resolve(run_dir: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            run_dir.join(p)
        }
    }
}
