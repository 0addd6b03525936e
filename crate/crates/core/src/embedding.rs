//! Embedding provider contract, unit-vector storage and exact cosine kNN.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding provider failed on input {index}: {cause}")]
    Provider { index: usize, cause: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("vector {0} has zero or non-finite norm")]
    Degenerate(usize),
}

/// Anything that turns texts into fixed-dimension real vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Raw (not necessarily normalized) vector for one text.
    fn embed_one(&self, text: &str) -> Result<Vec<f32>, String>;
}

/// Row-major matrix of unit-normalized vectors sharing one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    /// Normalizes every row; rejects ragged or zero-norm input.
    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = Vec<f32>>,
    {
        let mut m = Self::new(dim);
        for row in rows {
            m.push(row)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, mut row: Vec<f32>) -> Result<(), EmbeddingError> {
        if row.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        if !normalize_in_place(&mut row) {
            return Err(EmbeddingError::Degenerate(self.len()));
        }
        self.data.extend_from_slice(&row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// L2-normalizes in place. Returns false for zero or non-finite norms.
pub fn normalize_in_place(v: &mut [f32]) -> bool {
    let norm = v
        .iter()
        .map(|x| (*x as f64) * (*x as f64))
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return false;
    }
    // Already unit within tolerance: keep values bit-exact.
    if (norm - 1.0).abs() <= 1e-6 {
        return true;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    true
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Embeds and unit-normalizes every text, one row per input.
pub fn embed_texts<P, S>(provider: &P, texts: &[S]) -> Result<EmbeddingMatrix, EmbeddingError>
where
    P: EmbeddingProvider + ?Sized,
    S: AsRef<str> + Sync,
{
    let dim = provider.dimension();
    let rows: Vec<Vec<f32>> = texts
        .par_iter()
        .enumerate()
        .map(|(index, t)| {
            let v = provider
                .embed_one(t.as_ref())
                .map_err(|cause| EmbeddingError::Provider { index, cause })?;
            if v.len() != dim {
                return Err(EmbeddingError::Provider {
                    index,
                    cause: format!("expected dimension {dim}, provider returned {}", v.len()),
                });
            }
            Ok(v)
        })
        .collect::<Result<_, _>>()?;
    let mut m = EmbeddingMatrix::new(dim);
    for (index, row) in rows.into_iter().enumerate() {
        m.push(row).map_err(|_| EmbeddingError::Provider {
            index,
            cause: "zero-norm embedding".into(),
        })?;
    }
    Ok(m)
}

/// Deterministic test embedder: character trigrams hashed into `dim` buckets.
///
/// Text is padded with two `#` markers on each side so that even the empty
/// string yields a non-zero vector.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl TrigramEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingProvider for TrigramEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_one(&self, text: &str) -> Result<Vec<f32>, String> {
        let chars: Vec<char> = "##"
            .chars()
            .chain(text.chars())
            .chain("##".chars())
            .collect();
        let mut v = vec![0f32; self.dim];
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let bucket = (fnv1a64(&buf[..len]) % self.dim as u64) as usize;
            v[bucket] += 1.0;
        }
        Ok(v)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f32,
}

/// Similarity descending, then index ascending.
#[inline]
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

/// Exact top-k cosine neighbours of every query in `corpus`.
///
/// Returns `min(k, corpus.len())` neighbours per query, best first, with ties
/// resolved towards the lower corpus index.
pub fn knn(
    queries: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<Vec<Neighbor>>, EmbeddingError> {
    if k == 0 {
        return Err(EmbeddingError::ZeroK);
    }
    if !queries.is_empty() && !corpus.is_empty() && queries.dim() != corpus.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: corpus.dim(),
            actual: queries.dim(),
        });
    }
    let take = k.min(corpus.len());
    let out = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.row(qi);
            let mut scored: Vec<Neighbor> = corpus
                .rows()
                .enumerate()
                .map(|(index, c)| Neighbor {
                    index,
                    similarity: dot(q, c),
                })
                .collect();
            if take == 0 {
                return Vec::new();
            }
            if take < scored.len() {
                scored.select_nth_unstable_by(take - 1, neighbor_order);
                scored.truncate(take);
            }
            scored.sort_by(neighbor_order);
            scored
        })
        .collect();
    Ok(out)
}
