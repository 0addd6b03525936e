use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::dataset::{
    TaskPrefixes, DEFAULT_ENTITY_PROMPT, DEFAULT_LEAK_THRESHOLD, DEFAULT_RATIONALE_PREFIX,
};
use crate::decode::{BeamConfig, DecodeMode, DEFAULT_BEAM_SIZE, DEFAULT_MAX_LEN};
use crate::embedding::TrigramEmbedder;
use crate::eval::EmptySplitPolicy;
use crate::refine::RefineOptions;

pub const PROVIDER_URL_ENV: &str = "PROVIDER_URL";
pub const PROVIDER_TOKEN_ENV: &str = "PROVIDER_TOKEN";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Only used when generating fixtures.
    pub seed: u64,
    pub matching: MatchingConfig,
    pub refine: RefineConfig,
    pub build: BuildConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    /// Directory of the loaded config file; not part of the hash.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Trigram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub k: usize,
    pub embedder: EmbedderKind,
    pub embedding_dim: usize,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            k: 5,
            embedder: EmbedderKind::Trigram,
            embedding_dim: TrigramEmbedder::DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Canned responses from `mock_dir`.
    Mock,
    /// POST to `$PROVIDER_URL`, bearer `$PROVIDER_TOKEN`.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub provider: ProviderKind,
    /// Resolved against the config file's directory when relative.
    pub mock_dir: Option<PathBuf>,
    pub retries: u32,
    pub in_flight: usize,
    pub send_image: bool,
    pub timeout_secs: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            mock_dir: None,
            retries: 2,
            in_flight: 8,
            send_image: true,
            timeout_secs: 60,
        }
    }
}

impl RefineConfig {
    pub fn options(&self) -> RefineOptions {
        RefineOptions {
            retries: self.retries,
            send_image: self.send_image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub leak_threshold: f32,
    pub shard_size: usize,
    pub entity_prompt: String,
    pub rationale_prefix: String,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            leak_threshold: DEFAULT_LEAK_THRESHOLD,
            shard_size: 1000,
            entity_prompt: DEFAULT_ENTITY_PROMPT.to_string(),
            rationale_prefix: DEFAULT_RATIONALE_PREFIX.to_string(),
        }
    }
}

impl BuildConfig {
    pub fn prefixes(&self) -> TaskPrefixes {
        TaskPrefixes {
            entity_prompt: self.entity_prompt.clone(),
            rationale_prefix: self.rationale_prefix.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam_size: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    /// Ranked predictions written per query.
    pub top: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::FullTrie,
            beam_size: DEFAULT_BEAM_SIZE,
            max_len: DEFAULT_MAX_LEN,
            length_penalty: 0.0,
            top: 10,
        }
    }
}

impl DecodeConfig {
    pub fn beam(&self) -> BeamConfig {
        BeamConfig {
            beam_size: self.beam_size,
            max_len: self.max_len,
            length_penalty: self.length_penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub empty_split: EmptySplitPolicy,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| PipelineError::Usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    /// `refine.mock_dir`, resolved against the config file's directory when
    /// relative.
    pub fn mock_dir(&self) -> Option<PathBuf> {
        let dir = self.refine.mock_dir.as_ref()?;
        Some(match &self.base_dir {
            Some(base) if dir.is_relative() => base.join(dir),
            _ => dir.clone(),
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |what: &str| Err(PipelineError::Usage(format!("config: {what}")));
        if self.matching.k == 0 {
            return bad("matching.k must be at least 1");
        }
        if self.matching.embedding_dim == 0 {
            return bad("matching.embedding_dim must be at least 1");
        }
        if self.refine.retries > 10 {
            return bad("refine.retries must be at most 10");
        }
        if !(1..=256).contains(&self.refine.in_flight) {
            return bad("refine.in_flight must be in 1..=256");
        }
        if !(0.0..=1.0).contains(&self.build.leak_threshold) {
            return bad("build.leak_threshold must be in [0, 1]");
        }
        if self.build.shard_size == 0 {
            return bad("build.shard_size must be at least 1");
        }
        if self.decode.beam_size == 0 {
            return bad("decode.beam_size must be at least 1");
        }
        if self.decode.max_len == 0 {
            return bad("decode.max_len must be at least 1");
        }
        if self.decode.top == 0 {
            return bad("decode.top must be at least 1");
        }
        if !self.decode.length_penalty.is_finite() || self.decode.length_penalty < 0.0 {
            return bad("decode.length_penalty must be finite and non-negative");
        }
        Ok(())
    }

    /// Hex SHA-256 of the config's JSON form (fields in declaration order).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("config serializes"),
        ))
    }
}
