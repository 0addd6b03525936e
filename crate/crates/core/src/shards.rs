//! JSON-lines dataset shards with a SHA-256 manifest.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::TrainingExample;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ShardError {
    #[error("shard size must be at least 1")]
    ZeroShardSize,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("shard {path} does not match manifest: {reason}")]
    ManifestMismatch { path: String, reason: String },
    #[error("malformed json in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ShardError + '_ {
    move |source| ShardError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub shards: Vec<ShardEntry>,
    pub config_hash: String,
}

impl ShardManifest {
    pub fn total_count(&self) -> usize {
        self.shards.iter().map(|s| s.count).sum()
    }

    pub fn load(path: &Path) -> Result<Self, ShardError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ShardError::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Hex SHA-256 of the manifest's canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("manifest serializes"),
        ))
    }
}

/// Serializes one example per line.
pub fn encode_examples(examples: &[TrainingExample]) -> Vec<u8> {
    let mut buf = Vec::new();
    for ex in examples {
        serde_json::to_writer(&mut buf, ex).expect("example serializes");
        buf.push(b'\n');
    }
    buf
}

/// Writes `examples` as `shard-00000.jsonl`, ... of at most `shard_size`
/// lines each, plus `manifest.json`, into `dir`.
pub fn write_shards(
    examples: &[TrainingExample],
    shard_size: usize,
    dir: &Path,
    config_hash: &str,
) -> Result<ShardManifest, ShardError> {
    if shard_size == 0 {
        return Err(ShardError::ZeroShardSize);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    remove_stale_shards(dir)?;
    let mut shards = Vec::new();
    for (i, chunk) in examples.chunks(shard_size).enumerate() {
        let name = format!("shard-{i:05}.jsonl");
        let path = dir.join(&name);
        let bytes = encode_examples(chunk);
        let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        w.write_all(&bytes).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
        shards.push(ShardEntry {
            path: name,
            count: chunk.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = ShardManifest {
        shards,
        config_hash: config_hash.to_string(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

fn remove_stale_shards(dir: &Path) -> Result<(), ShardError> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if name.starts_with("shard-") && name.ends_with(".jsonl") {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

/// Reads every shard listed in the manifest at `manifest_path`, verifying
/// hashes and line counts.
pub fn read_shards(manifest_path: &Path) -> Result<Vec<TrainingExample>, ShardError> {
    let manifest = ShardManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(manifest.total_count());
    for entry in &manifest.shards {
        let path = base.join(&entry.path);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != entry.sha256 {
            return Err(ShardError::ManifestMismatch {
                path: entry.path.clone(),
                reason: format!("sha256 {digest} != {}", entry.sha256),
            });
        }
        let mut count = 0;
        for line in BufReader::new(bytes.as_slice()).lines() {
            let line = line.map_err(io_err(&path))?;
            let ex: TrainingExample =
                serde_json::from_str(&line).map_err(|e| ShardError::Malformed {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
            out.push(ex);
            count += 1;
        }
        if count != entry.count {
            return Err(ShardError::ManifestMismatch {
                path: entry.path.clone(),
                reason: format!("{count} lines, manifest says {}", entry.count),
            });
        }
    }
    Ok(out)
}
