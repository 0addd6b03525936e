use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::objective::log_softmax;

/// Next-token distribution of a generative model conditioned on an opaque
/// context (the image) and the tokens generated so far.
pub trait Scorer: Send + Sync {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities over the whole vocabulary; must sum to one in
    /// probability space. Entries may be `-inf`.
    fn next_logprobs(&self, context: &str, prefix: &[u32]) -> Vec<f64>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_logprobs(&self, context: &str, prefix: &[u32]) -> Vec<f64> {
        (**self).next_logprobs(context, prefix)
    }
}

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("io error reading scorer table: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scorer table: {0}")]
    Malformed(String),
}

#[derive(Debug, Deserialize)]
struct TableFile {
    vocab_size: usize,
    #[serde(default)]
    default_logit: f64,
    entries: Vec<TableEntry>,
}

#[derive(Debug, Deserialize)]
struct TableEntry {
    /// `"*"` matches every context.
    context: String,
    prefix: Vec<u32>,
    /// `(token, logit)`; unlisted tokens get the table's default logit.
    logits: Vec<(u32, f64)>,
}

/// Scorer backed by a lookup table of logits; used for hand-built decoding
/// fixtures. Unknown `(context, prefix)` pairs yield the uniform distribution.
#[derive(Debug, Clone)]
pub struct TabulatedScorer {
    vocab_size: usize,
    rows: HashMap<(String, Vec<u32>), Vec<f64>>,
}

impl TabulatedScorer {
    pub const ANY_CONTEXT: &'static str = "*";

    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            rows: HashMap::new(),
        }
    }

    /// Sets the logits after `prefix`; tokens not listed get `default_logit`.
    pub fn set(
        &mut self,
        context: &str,
        prefix: &[u32],
        logits: &[(u32, f64)],
        default_logit: f64,
    ) -> Result<(), ScorerError> {
        let mut row = vec![default_logit; self.vocab_size];
        for &(tok, logit) in logits {
            let slot = row
                .get_mut(tok as usize)
                .ok_or_else(|| ScorerError::Malformed(format!("token {tok} outside vocabulary")))?;
            *slot = logit;
        }
        self.rows
            .insert((context.to_string(), prefix.to_vec()), log_softmax(&row));
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScorerError> {
        let file: TableFile =
            serde_json::from_str(text).map_err(|e| ScorerError::Malformed(e.to_string()))?;
        if file.vocab_size == 0 {
            return Err(ScorerError::Malformed("vocab_size must be positive".into()));
        }
        let mut s = Self::new(file.vocab_size);
        for e in &file.entries {
            s.set(&e.context, &e.prefix, &e.logits, file.default_logit)?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Scorer for TabulatedScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, context: &str, prefix: &[u32]) -> Vec<f64> {
        let key = (context.to_string(), prefix.to_vec());
        if let Some(row) = self.rows.get(&key) {
            return row.clone();
        }
        let wildcard = (Self::ANY_CONTEXT.to_string(), key.1);
        match self.rows.get(&wildcard) {
            Some(row) => row.clone(),
            None => vec![-(self.vocab_size as f64).ln(); self.vocab_size],
        }
    }
}

/// Deterministic pseudo-random scorer: the logits for a given
/// `(seed, context, prefix)` never change.
#[derive(Debug, Clone)]
pub struct RandomScorer {
    vocab_size: usize,
    seed: u64,
    scale: f64,
}

impl RandomScorer {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            seed,
            scale: 4.0,
        }
    }

    /// Logits are drawn uniformly from `[-scale, scale]`.
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

impl Scorer for RandomScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, context: &str, prefix: &[u32]) -> Vec<f64> {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.seed.hash(&mut h);
        context.hash(&mut h);
        prefix.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|_| rng.gen_range(-self.scale..=self.scale))
            .collect();
        log_softmax(&logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total_prob(row: &[f64]) -> f64 {
        row.iter().map(|l| l.exp()).sum()
    }

    #[test]
    fn table_from_json() {
        let s = TabulatedScorer::from_json(
            r#"{"vocab_size": 4, "default_logit": -1e9,
                "entries": [{"context": "*", "prefix": [], "logits": [[1, 0.0], [2, 0.0]]},
                            {"context": "img", "prefix": [], "logits": [[3, 0.0]]}]}"#,
        )
        .unwrap();
        let row = s.next_logprobs("other", &[]);
        assert!((row[1] - 0.5f64.ln()).abs() < 1e-12);
        assert!((row[2] - 0.5f64.ln()).abs() < 1e-12);
        assert!((s.next_logprobs("img", &[])[3]).abs() < 1e-12);
        let uniform = s.next_logprobs("img", &[1]);
        assert!((uniform[0] - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn table_rejects_out_of_range_token() {
        let err = TabulatedScorer::from_json(
            r#"{"vocab_size": 2, "entries": [{"context": "*", "prefix": [], "logits": [[5, 1.0]]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, ScorerError::Malformed(_)));
    }

    #[test]
    fn random_scorer_is_deterministic_and_normalized() {
        let s = RandomScorer::new(257, 7);
        let a = s.next_logprobs("x", &[1, 2]);
        assert_eq!(a, s.next_logprobs("x", &[1, 2]));
        assert_ne!(a, s.next_logprobs("x", &[1, 3]));
        assert!((total_prob(&a) - 1.0).abs() < 1e-9);
    }
}
