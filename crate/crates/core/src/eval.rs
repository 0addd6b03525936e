//! Seen/unseen accuracy, harmonic mean, label mappings and memory-base
//! visual matching.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{knn, EmbeddingError, EmbeddingMatrix};
use crate::kb::{normalize_name, EntityId, EntityVocabulary};

pub const REPORT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldItem {
    pub query_id: String,
    pub entity: EntityId,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub query_id: String,
    /// Best first; may be empty.
    pub ranked: Vec<EntityId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("harmonic mean of negative input ({0}, {1})")]
    NegativeInput(f64, f64),
    #[error("duplicate query id {0:?}")]
    DuplicateQueryId(String),
    #[error("no gold items in the {0:?} split")]
    EmptySplit(Split),
}

/// `2ab / (a + b)`, taken as 0 when either argument is 0.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64, EvalError> {
    if a < 0.0 || b < 0.0 || a.is_nan() || b.is_nan() {
        return Err(EvalError::NegativeInput(a, b));
    }
    if a == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

fn prediction_index(preds: &[Prediction]) -> HashMap<&str, &[EntityId]> {
    preds
        .iter()
        .map(|p| (p.query_id.as_str(), p.ranked.as_slice()))
        .collect()
}

fn hits(index: &HashMap<&str, &[EntityId]>, golds: &[&GoldItem], k: usize) -> usize {
    golds
        .iter()
        .filter(|g| {
            index
                .get(g.query_id.as_str())
                .is_some_and(|r| r.iter().take(k).any(|&e| e == g.entity))
        })
        .count()
}

/// Fraction of `golds` whose entity is among the first `k` predictions for
/// that query; queries without a prediction count as misses. Empty `golds`
/// give 0.
pub fn top_k_accuracy(preds: &[Prediction], golds: &[GoldItem], k: usize) -> f64 {
    if golds.is_empty() {
        return 0.0;
    }
    let index = prediction_index(preds);
    let refs: Vec<&GoldItem> = golds.iter().collect();
    hits(&index, &refs, k) as f64 / golds.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptySplitPolicy {
    /// An empty split is an error.
    #[default]
    Error,
    /// Report the non-empty split's accuracy as the harmonic mean.
    UseOther,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub seen: f64,
    pub unseen: f64,
    pub hm: f64,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_seen: f64,
    pub acc_unseen: f64,
    pub hm: f64,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub per_k: Vec<KRow>,
}

impl EvalReport {
    /// Fixed-width table of the per-k rows, accuracies scaled by 100.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>4}  {:>6}  {:>6}  {:>6}  {:>7}\n",
            "k", "HM", "seen", "unseen", "overall"
        );
        for r in &self.per_k {
            s.push_str(&format!(
                "{:>4}  {:>6.1}  {:>6.1}  {:>6.1}  {:>7.1}\n",
                r.k,
                r.hm * 100.0,
                r.seen * 100.0,
                r.unseen * 100.0,
                r.overall * 100.0
            ));
        }
        s
    }
}

fn split_hm(
    seen: f64,
    unseen: f64,
    n_seen: usize,
    n_unseen: usize,
    policy: EmptySplitPolicy,
) -> Result<f64, EvalError> {
    match (n_seen, n_unseen, policy) {
        (0, 0, _) | (0, _, EmptySplitPolicy::Error) => Err(EvalError::EmptySplit(Split::Seen)),
        (_, 0, EmptySplitPolicy::Error) => Err(EvalError::EmptySplit(Split::Unseen)),
        (0, _, EmptySplitPolicy::UseOther) => Ok(unseen),
        (_, 0, EmptySplitPolicy::UseOther) => Ok(seen),
        _ => harmonic_mean(seen, unseen),
    }
}

pub fn evaluate(preds: &[Prediction], golds: &[GoldItem]) -> Result<EvalReport, EvalError> {
    evaluate_with(preds, golds, EmptySplitPolicy::Error)
}

pub fn evaluate_with(
    preds: &[Prediction],
    golds: &[GoldItem],
    policy: EmptySplitPolicy,
) -> Result<EvalReport, EvalError> {
    check_unique(preds.iter().map(|p| p.query_id.as_str()))?;
    check_unique(golds.iter().map(|g| g.query_id.as_str()))?;
    let index = prediction_index(preds);
    let seen: Vec<&GoldItem> = golds.iter().filter(|g| g.split == Split::Seen).collect();
    let unseen: Vec<&GoldItem> = golds.iter().filter(|g| g.split == Split::Unseen).collect();
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };

    let mut per_k = Vec::with_capacity(REPORT_KS.len());
    for k in REPORT_KS {
        let hs = hits(&index, &seen, k);
        let hu = hits(&index, &unseen, k);
        let (s, u) = (frac(hs, seen.len()), frac(hu, unseen.len()));
        per_k.push(KRow {
            k,
            seen: s,
            unseen: u,
            hm: split_hm(s, u, seen.len(), unseen.len(), policy)?,
            overall: frac(hs + hu, golds.len()),
        });
    }
    Ok(EvalReport {
        acc_seen: per_k[0].seen,
        acc_unseen: per_k[0].unseen,
        hm: per_k[0].hm,
        n_seen: seen.len(),
        n_unseen: unseen.len(),
        per_k,
    })
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), EvalError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(EvalError::DuplicateQueryId(id.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MappingError {
    #[error("label {0:?} has no mapping")]
    UnmappedLabel(String),
    #[error("mapped entity {0:?} is not in the vocabulary")]
    UnresolvedEntity(String),
    #[error("mapping line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Dataset category label to entity name, read from two-column TSV with
/// `#` comments. Labels are matched after name normalization.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMapping {
    map: HashMap<String, String>,
}

impl LabelMapping {
    pub fn parse(text: &str) -> Result<Self, MappingError> {
        let mut map = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let malformed = |reason: &str| MappingError::Malformed {
                line: i + 1,
                reason: reason.to_string(),
            };
            let (label, entity) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected two tab-separated columns"))?;
            let (label, entity) = (normalize_name(label), normalize_name(entity));
            if label.is_empty() || entity.is_empty() {
                return Err(malformed("empty column"));
            }
            if map.insert(label.clone(), entity).is_some() {
                return Err(malformed(&format!("duplicate label {label:?}")));
            }
        }
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Normalized entity name for `label`.
    pub fn get(&self, label: &str) -> Option<&str> {
        self.map.get(&normalize_name(label)).map(String::as_str)
    }

    pub fn entity_names(&self) -> impl Iterator<Item = &str> {
        self.map.values().map(String::as_str)
    }
}

pub fn apply_label_mapping<S: AsRef<str>>(
    mapping: &LabelMapping,
    labels: &[S],
    vocab: &EntityVocabulary,
) -> Result<Vec<EntityId>, MappingError> {
    labels
        .iter()
        .map(|label| {
            let label = label.as_ref();
            let name = mapping
                .get(label)
                .ok_or_else(|| MappingError::UnmappedLabel(label.to_string()))?;
            vocab
                .lookup_canonical(name)
                .ok_or_else(|| MappingError::UnresolvedEntity(name.to_string()))
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("memory base is empty")]
    EmptyMemory,
    #[error("{embeddings} memory embeddings but {labels} labels")]
    LengthMismatch { embeddings: usize, labels: usize },
    #[error("dimension mismatch: memory {expected}, queries {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Labeled unit vectors for nearest-neighbour classification.
#[derive(Debug, Clone)]
pub struct MemoryBase {
    embeddings: EmbeddingMatrix,
    labels: Vec<EntityId>,
}

impl MemoryBase {
    pub fn new(embeddings: EmbeddingMatrix, labels: Vec<EntityId>) -> Result<Self, MemoryError> {
        if embeddings.len() != labels.len() {
            return Err(MemoryError::LengthMismatch {
                embeddings: embeddings.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[EntityId] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [EntityId] {
        &mut self.labels
    }
}

/// Label of the most cosine-similar memory item for every query, ties going
/// to the lower memory index.
pub fn visual_match(
    memory: &MemoryBase,
    queries: &EmbeddingMatrix,
) -> Result<Vec<EntityId>, MemoryError> {
    if memory.is_empty() {
        return Err(MemoryError::EmptyMemory);
    }
    if !queries.is_empty() && queries.dim() != memory.embeddings.dim() {
        return Err(MemoryError::DimensionMismatch {
            expected: memory.embeddings.dim(),
            actual: queries.dim(),
        });
    }
    let nn = knn(queries, &memory.embeddings, 1).map_err(|e| match e {
        EmbeddingError::DimensionMismatch { expected, actual } => {
            MemoryError::DimensionMismatch { expected, actual }
        }
        other => unreachable!("knn with k=1: {other}"),
    })?;
    Ok(nn.iter().map(|n| memory.labels[n[0].index]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::VocabRow;
    use proptest::prelude::*;

    fn gold(id: &str, e: EntityId, split: Split) -> GoldItem {
        GoldItem {
            query_id: id.into(),
            entity: e,
            split,
        }
    }

    fn pred(id: &str, ranked: &[EntityId]) -> Prediction {
        Prediction {
            query_id: id.into(),
            ranked: ranked.to_vec(),
        }
    }

    #[test]
    fn hm_values() {
        assert!((harmonic_mean(10.0, 10.0).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(harmonic_mean(0.0, 50.0).unwrap(), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0).unwrap(), 0.0);
        let hm = harmonic_mean(36.0, 25.1).unwrap();
        assert_eq!(format!("{hm:.1}"), "29.6");
        assert!(matches!(
            harmonic_mean(-1.0, 2.0),
            Err(EvalError::NegativeInput(..))
        ));
    }

    #[test]
    fn rank_cutoffs() {
        let g = [gold("q", 7, Split::Seen)];
        let p = [pred("q", &[1, 2, 7])];
        assert_eq!(top_k_accuracy(&p, &g, 1), 0.0);
        assert_eq!(top_k_accuracy(&p, &g, 3), 1.0);
        assert_eq!(top_k_accuracy(&[], &g, 10), 0.0);
        assert_eq!(top_k_accuracy(&[pred("q", &[])], &g, 10), 0.0);
    }

    #[test]
    fn seen_right_unseen_wrong() {
        let g = [gold("a", 1, Split::Seen), gold("b", 2, Split::Unseen)];
        let p = [pred("a", &[1]), pred("b", &[3])];
        let r = evaluate(&p, &g).unwrap();
        assert_eq!((r.acc_seen, r.acc_unseen, r.hm), (1.0, 0.0, 0.0));
        assert_eq!(
            r.per_k.iter().map(|k| k.k).collect::<Vec<_>>(),
            vec![1, 5, 10]
        );
    }

    #[test]
    fn duplicate_ids() {
        let g = [gold("a", 1, Split::Seen), gold("a", 2, Split::Unseen)];
        assert_eq!(
            evaluate(&[], &g),
            Err(EvalError::DuplicateQueryId("a".into()))
        );
        let g = [gold("a", 1, Split::Seen)];
        let p = [pred("a", &[1]), pred("a", &[2])];
        assert_eq!(
            evaluate(&p, &g),
            Err(EvalError::DuplicateQueryId("a".into()))
        );
    }

    #[test]
    fn empty_split_policy() {
        let g = [gold("a", 1, Split::Seen), gold("b", 1, Split::Seen)];
        let p = [pred("a", &[1])];
        assert_eq!(evaluate(&p, &g), Err(EvalError::EmptySplit(Split::Unseen)));
        let r = evaluate_with(&p, &g, EmptySplitPolicy::UseOther).unwrap();
        assert_eq!(r.hm, 0.5);
    }

    #[test]
    fn mapping_file() {
        let m = LabelMapping::parse(
            "# flowers\npink primrose\toenothera speciosa\nBoeing 707\tboeing 707\n\n",
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        let v = EntityVocabulary::from_rows([
            VocabRow::new("Oenothera speciosa", ""),
            VocabRow::new("Boeing 707", ""),
        ])
        .unwrap();
        assert_eq!(
            apply_label_mapping(&m, &["pink primrose", "Boeing 707"], &v).unwrap(),
            vec![0, 1]
        );
        assert_eq!(
            apply_label_mapping(&m, &["daisy"], &v),
            Err(MappingError::UnmappedLabel("daisy".into()))
        );
        let small = EntityVocabulary::from_rows([VocabRow::new("boeing 707", "")]).unwrap();
        assert_eq!(
            apply_label_mapping(&m, &["pink primrose"], &small),
            Err(MappingError::UnresolvedEntity("oenothera speciosa".into()))
        );
        assert!(matches!(
            LabelMapping::parse("no tab here"),
            Err(MappingError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn visual_match_basics() {
        let mem = EmbeddingMatrix::from_rows(2, [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]])
            .unwrap();
        let base = MemoryBase::new(mem, vec![10, 20, 30]).unwrap();
        let q = EmbeddingMatrix::from_rows(2, [vec![0.9, 0.1], vec![0.0, 1.0]]).unwrap();
        assert_eq!(visual_match(&base, &q).unwrap(), vec![10, 20]);

        let empty = MemoryBase::new(EmbeddingMatrix::new(2), vec![]).unwrap();
        assert_eq!(visual_match(&empty, &q), Err(MemoryError::EmptyMemory));
        let q3 = EmbeddingMatrix::from_rows(3, [vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            visual_match(&base, &q3),
            Err(MemoryError::DimensionMismatch { .. })
        ));
        assert!(MemoryBase::new(EmbeddingMatrix::new(2), vec![1]).is_err());
    }

    proptest! {
        #[test]
        fn hm_bounds(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let h = harmonic_mean(a, b).unwrap();
            prop_assert_eq!(h, harmonic_mean(b, a).unwrap());
            prop_assert!(h <= (a + b) / 2.0 + 1e-9);
            prop_assert!(h <= 2.0 * a.min(b) + 1e-9);
        }

        #[test]
        fn top_k_monotone(ranked in prop::collection::vec(prop::collection::vec(0u32..8, 0..12), 1..20)) {
            let golds: Vec<_> = (0..ranked.len()).map(|i| gold(&i.to_string(), (i % 8) as u32, Split::Seen)).collect();
            let preds: Vec<_> = ranked.iter().enumerate().map(|(i, r)| pred(&i.to_string(), r)).collect();
            let mut last = 0.0;
            for k in 1..=12 {
                let acc = top_k_accuracy(&preds, &golds, k);
                prop_assert!(acc >= last);
                last = acc;
            }
        }
    }
}
