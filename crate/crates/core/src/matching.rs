//! Candidate entity assignment: each entity name retrieves its most similar
//! captions, and every image keeps at most one candidate.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_texts, knn, EmbeddingError, EmbeddingProvider};
use crate::kb::{EntityId, EntityVocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionedImage {
    pub image_id: String,
    pub caption: String,
    #[serde(default)]
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAssignment {
    pub image_id: String,
    pub caption: String,
    pub image_ref: String,
    pub candidate_entity_id: EntityId,
    pub similarity: f32,
}

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("duplicate image id {0:?} in corpus")]
    DuplicateImageId(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Retrieves the top-`k` captions for every entity and resolves conflicts so
/// that each image keeps only its best candidate (higher similarity, then
/// lower entity id). Output follows corpus order.
pub fn build_candidate_assignments<P>(
    vocab: &EntityVocabulary,
    corpus: &[CaptionedImage],
    provider: &P,
    k: usize,
) -> Result<Vec<CandidateAssignment>, MatchError>
where
    P: EmbeddingProvider + ?Sized,
{
    if corpus.is_empty() {
        return Err(MatchError::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(corpus.len());
    for img in corpus {
        if !seen.insert(img.image_id.as_str()) {
            return Err(MatchError::DuplicateImageId(img.image_id.clone()));
        }
    }

    let names: Vec<&str> = vocab
        .records()
        .iter()
        .map(|r| r.canonical_name.as_str())
        .collect();
    let captions: Vec<&str> = corpus.iter().map(|c| c.caption.as_str()).collect();
    let entity_vecs = embed_texts(provider, &names)?;
    let caption_vecs = embed_texts(provider, &captions)?;
    let hits = knn(&entity_vecs, &caption_vecs, k)?;

    // best[image] = (similarity, entity id)
    let mut best: Vec<Option<(f32, EntityId)>> = vec![None; corpus.len()];
    for (entity, neighbours) in hits.iter().enumerate() {
        let entity = entity as EntityId;
        for n in neighbours {
            let slot = &mut best[n.index];
            let better = match slot {
                None => true,
                Some((sim, id)) => n.similarity > *sim || (n.similarity == *sim && entity < *id),
            };
            if better {
                *slot = Some((n.similarity, entity));
            }
        }
    }

    Ok(best
        .into_iter()
        .enumerate()
        .filter_map(|(i, b)| {
            b.map(|(similarity, candidate_entity_id)| CandidateAssignment {
                image_id: corpus[i].image_id.clone(),
                caption: corpus[i].caption.clone(),
                image_ref: corpus[i].image_ref.clone(),
                candidate_entity_id,
                similarity,
            })
        })
        .collect())
}
