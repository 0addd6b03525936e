use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::embedding::EmbeddingMatrix;
use crate::eval::Split;
use crate::kb::EntityVocabulary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRow {
    pub image_id: String,
    pub caption: String,
    #[serde(default)]
    pub image_ref: String,
    /// Text stand-in for the image when the refining model cannot see it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_proxy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub image_id: String,
    pub caption: String,
    pub candidate_entity: String,
    pub similarity: f32,
    #[serde(default)]
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_proxy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRow {
    pub image_id: String,
    pub stage: String,
    pub reason: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    /// Scorer conditioning; the query id when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub query_id: String,
    pub ranked: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRow {
    pub query_id: String,
    /// Entity name, or a dataset label when a mapping is applied.
    pub entity: String,
    pub split: Split,
    #[serde(default)]
    pub question: String,
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::data(path.display(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::data(path.display(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| PipelineError::data(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(|e| PipelineError::data(path.display(), e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).expect("row serializes");
        w.write_all(b"\n")
            .map_err(|e| PipelineError::data(path.display(), e))?;
    }
    w.flush()
        .map_err(|e| PipelineError::data(path.display(), e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::data(path.display(), e))
}

pub fn read_vocab(path: &Path) -> Result<EntityVocabulary, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::data(path.display(), e))?;
    EntityVocabulary::read(BufReader::new(file)).map_err(|e| PipelineError::data(path.display(), e))
}

/// Reads an embeddings file, returning ids and the normalized matrix.
pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, EmbeddingMatrix), PipelineError> {
    let rows: Vec<EmbeddingRow> = read_jsonl(path)?;
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut ids = Vec::with_capacity(rows.len());
    let mut m = EmbeddingMatrix::new(dim);
    for row in rows {
        m.push(row.vector)
            .map_err(|e| PipelineError::data(format!("{} ({})", path.display(), row.id), e))?;
        ids.push(row.id);
    }
    Ok((ids, m))
}
