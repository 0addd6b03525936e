//! Multi-task example expansion, evaluation-leak filtering and seen/unseen
//! splitting.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, EmbeddingMatrix};
use crate::kb::normalize_name;
use crate::refine::RefinedRecord;

pub const DEFAULT_ENTITY_PROMPT: &str = "what is the main entity in this image?";
pub const DEFAULT_RATIONALE_PREFIX: &str = "[rationale]";
pub const DEFAULT_LEAK_THRESHOLD: f32 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Entity,
    Rationale,
    Qa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub task: Task,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_text: String,
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrefixes {
    pub entity_prompt: String,
    pub rationale_prefix: String,
}

impl Default for TaskPrefixes {
    fn default() -> Self {
        Self {
            entity_prompt: DEFAULT_ENTITY_PROMPT.to_string(),
            rationale_prefix: DEFAULT_RATIONALE_PREFIX.to_string(),
        }
    }
}

/// One entity example, one rationale example, then the three QA examples.
pub fn expand_examples(record: &RefinedRecord, prefixes: &TaskPrefixes) -> Vec<TrainingExample> {
    let image_id = &record.image_id;
    let mut out = Vec::with_capacity(5);
    out.push(TrainingExample {
        task: Task::Entity,
        input_text: prefixes.entity_prompt.clone(),
        target_text: record.entity().to_string(),
        image_id: image_id.clone(),
    });
    out.push(TrainingExample {
        task: Task::Rationale,
        input_text: prefixes.rationale_prefix.clone(),
        target_text: record.outcome.rationale.clone(),
        image_id: image_id.clone(),
    });
    for qa in &record.qa_pairs {
        out.push(TrainingExample {
            task: Task::Qa,
            input_text: qa.question.clone(),
            target_text: qa.answer.clone(),
            image_id: image_id.clone(),
        });
    }
    out
}

pub fn expand_all(records: &[RefinedRecord], prefixes: &TaskPrefixes) -> Vec<TrainingExample> {
    records
        .iter()
        .flat_map(|r| expand_examples(r, prefixes))
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum LeakError {
    #[error("dimension mismatch: records {records}, eval {eval}")]
    DimensionMismatch { records: usize, eval: usize },
    #[error("{records} records but {embeddings} record embeddings")]
    CountMismatch { records: usize, embeddings: usize },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f32),
}

/// Highest cosine similarity of each record embedding to any eval embedding.
/// `None` when the eval set is empty.
pub fn max_similarities(
    record_embeddings: &EmbeddingMatrix,
    eval_embeddings: &EmbeddingMatrix,
) -> Result<Vec<Option<f32>>, LeakError> {
    if !eval_embeddings.is_empty()
        && !record_embeddings.is_empty()
        && record_embeddings.dim() != eval_embeddings.dim()
    {
        return Err(LeakError::DimensionMismatch {
            records: record_embeddings.dim(),
            eval: eval_embeddings.dim(),
        });
    }
    Ok(record_embeddings
        .rows()
        .take(record_embeddings.len())
        .map(|r| {
            eval_embeddings
                .rows()
                .take(eval_embeddings.len())
                .map(|e| dot(r, e))
                .reduce(f32::max)
        })
        .collect())
}

/// Splits `records` into (kept, removed). A record is removed iff its
/// highest similarity to any eval embedding is strictly above `threshold`.
pub fn leak_filter<T: Clone>(
    records: &[T],
    record_embeddings: &EmbeddingMatrix,
    eval_embeddings: &EmbeddingMatrix,
    threshold: f32,
) -> Result<(Vec<T>, Vec<T>), LeakError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(LeakError::InvalidThreshold(threshold));
    }
    if records.len() != record_embeddings.len() {
        return Err(LeakError::CountMismatch {
            records: records.len(),
            embeddings: record_embeddings.len(),
        });
    }
    let sims = max_similarities(record_embeddings, eval_embeddings)?;
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (rec, sim) in records.iter().zip(sims) {
        match sim {
            Some(s) if s > threshold => removed.push(rec.clone()),
            _ => kept.push(rec.clone()),
        }
    }
    Ok((kept, removed))
}

/// Partitions examples by whether their entity is in `seen_entities`.
///
/// Entity and QA examples are judged by their own target; rationale examples
/// follow the entity example of the same image.
pub fn split_seen_unseen(
    examples: &[TrainingExample],
    seen_entities: &HashSet<String>,
) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
    let seen: HashSet<String> = seen_entities.iter().map(|s| normalize_name(s)).collect();
    let record_entity: HashMap<&str, &str> = examples
        .iter()
        .filter(|e| e.task == Task::Entity)
        .map(|e| (e.image_id.as_str(), e.target_text.as_str()))
        .collect();
    let is_seen = |e: &TrainingExample| {
        let target = match e.task {
            Task::Rationale => match record_entity.get(e.image_id.as_str()) {
                Some(t) => *t,
                None => return false,
            },
            _ => e.target_text.as_str(),
        };
        seen.contains(&normalize_name(target))
    };
    examples.iter().cloned().partition(is_seen)
}
