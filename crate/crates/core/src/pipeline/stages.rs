use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::io::{
    read_embeddings, read_jsonl, read_vocab, write_json, write_jsonl, AssignmentRow, CorpusRow,
    GoldRow, PredictionRow, QueryRow,
};
use super::refine_stage::{count_lines, REFINED_FILE, REFINE_STATS_FILE, REJECTS_FILE};
use super::{EmbedderKind, PipelineConfig, PipelineError};
use crate::dataset::{expand_all, leak_filter, max_similarities};
use crate::decode::{beam_search, ByteTokenizer, DecodeMode, TabulatedScorer, TokenTrie};
use crate::embedding::{EmbeddingMatrix, EmbeddingProvider, TrigramEmbedder};
use crate::eval::{evaluate_with, EvalReport, GoldItem, LabelMapping, Prediction};
use crate::kb::{normalize_name, EntityId, EntityVocabulary};
use crate::matching::{build_candidate_assignments, CaptionedImage};
use crate::refine::RefinedRecord;
use crate::shards::{write_shards, MANIFEST_FILE};

pub const ASSIGNMENTS_FILE: &str = "assignments.jsonl";
pub const SHARD_DIR: &str = "shards";
pub const LEAK_REMOVED_FILE: &str = "leak_removed.jsonl";
pub const BUILD_STATS_FILE: &str = "build_stats.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::data(dir.display(), e))
}

fn embedder(cfg: &PipelineConfig) -> Box<dyn EmbeddingProvider> {
    match cfg.matching.embedder {
        EmbedderKind::Trigram => Box::new(TrigramEmbedder::new(cfg.matching.embedding_dim)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchStats {
    pub images: usize,
    pub assigned: usize,
    pub entities_used: usize,
}

/// Writes `assignments.jsonl`: at most one candidate entity per image, in
/// corpus order. An empty corpus yields an empty file.
pub fn run_match(
    corpus: &Path,
    vocab: &Path,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<MatchStats, PipelineError> {
    let vocab = read_vocab(vocab)?;
    let rows: Vec<CorpusRow> = read_jsonl(corpus)?;
    ensure_dir(out)?;
    let path = out.join(ASSIGNMENTS_FILE);
    if rows.is_empty() {
        write_jsonl::<AssignmentRow>(&path, &[])?;
        return Ok(MatchStats {
            images: 0,
            assigned: 0,
            entities_used: 0,
        });
    }
    let images: Vec<CaptionedImage> = rows
        .iter()
        .map(|r| CaptionedImage {
            image_id: r.image_id.clone(),
            caption: r.caption.clone(),
            image_ref: r.image_ref.clone(),
        })
        .collect();
    let proxies: HashMap<&str, &str> = rows
        .iter()
        .filter_map(|r| Some((r.image_id.as_str(), r.caption_proxy.as_deref()?)))
        .collect();
    let assignments =
        build_candidate_assignments(&vocab, &images, embedder(cfg).as_ref(), cfg.matching.k)
            .map_err(|e| PipelineError::data(corpus.display(), e))?;
    let out_rows: Vec<AssignmentRow> = assignments
        .iter()
        .map(|a| AssignmentRow {
            image_id: a.image_id.clone(),
            caption: a.caption.clone(),
            candidate_entity: vocab
                .name(a.candidate_entity_id)
                .unwrap_or_default()
                .to_string(),
            similarity: a.similarity,
            image_ref: a.image_ref.clone(),
            caption_proxy: proxies.get(a.image_id.as_str()).map(|p| p.to_string()),
        })
        .collect();
    write_jsonl(&path, &out_rows)?;
    let mut used: Vec<EntityId> = assignments.iter().map(|a| a.candidate_entity_id).collect();
    used.sort_unstable();
    used.dedup();
    Ok(MatchStats {
        images: rows.len(),
        assigned: out_rows.len(),
        entities_used: used.len(),
    })
}

#[derive(Debug, Clone)]
pub struct BuildArgs {
    pub records: PathBuf,
    /// Image embeddings of the refined records, keyed by image id.
    pub record_embeddings: Option<PathBuf>,
    /// Embeddings of evaluation images to guard against.
    pub eval_embeddings: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub records: usize,
    pub leak_removed: usize,
    pub kept: usize,
    pub examples: usize,
    pub shards: usize,
    pub config_hash: String,
}

#[derive(Serialize)]
struct LeakRow<'a> {
    image_id: &'a str,
    max_similarity: f32,
}

/// Leak-filters refined records against evaluation embeddings, expands the
/// survivors into multi-task examples and writes shards plus a manifest.
pub fn run_build(cfg: &PipelineConfig, args: &BuildArgs) -> Result<BuildStats, PipelineError> {
    let records: Vec<RefinedRecord> = read_jsonl(&args.records)?;
    ensure_dir(&args.out)?;
    let (kept, removed_rows) = match &args.eval_embeddings {
        None => (records.clone(), Vec::new()),
        Some(eval_path) => {
            let rec_path = args.record_embeddings.as_ref().ok_or_else(|| {
                PipelineError::Usage("--eval-embeddings requires --record-embeddings".into())
            })?;
            let (_, eval) = read_embeddings(eval_path)?;
            let (ids, all) = read_embeddings(rec_path)?;
            let index: HashMap<&str, usize> = ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            let mut rec = EmbeddingMatrix::new(all.dim());
            for r in &records {
                let i = index.get(r.image_id.as_str()).ok_or_else(|| {
                    PipelineError::Data(format!(
                        "{}: no embedding for image {:?}",
                        rec_path.display(),
                        r.image_id
                    ))
                })?;
                rec.push(all.row(*i).to_vec())
                    .map_err(|e| PipelineError::data(rec_path.display(), e))?;
            }
            let sims = max_similarities(&rec, &eval)
                .map_err(|e| PipelineError::data(eval_path.display(), e))?;
            let (kept, removed) = leak_filter(&records, &rec, &eval, cfg.build.leak_threshold)
                .map_err(|e| PipelineError::data(eval_path.display(), e))?;
            let sim_of: HashMap<&str, f32> = records
                .iter()
                .zip(&sims)
                .filter_map(|(r, s)| Some((r.image_id.as_str(), (*s)?)))
                .collect();
            let rows: Vec<(String, f32)> = removed
                .iter()
                .map(|r| (r.image_id.clone(), sim_of[r.image_id.as_str()]))
                .collect();
            (kept, rows)
        }
    };
    let leak_rows: Vec<LeakRow> = removed_rows
        .iter()
        .map(|(id, s)| LeakRow {
            image_id: id,
            max_similarity: *s,
        })
        .collect();
    write_jsonl(&args.out.join(LEAK_REMOVED_FILE), &leak_rows)?;

    let examples = expand_all(&kept, &cfg.build.prefixes());
    let shard_dir = args.out.join(SHARD_DIR);
    let manifest = write_shards(&examples, cfg.build.shard_size, &shard_dir, &cfg.hash())
        .map_err(|e| PipelineError::data(shard_dir.display(), e))?;
    let stats = BuildStats {
        records: records.len(),
        leak_removed: leak_rows.len(),
        kept: kept.len(),
        examples: examples.len(),
        shards: manifest.shards.len(),
        config_hash: manifest.config_hash,
    };
    write_json(&args.out.join(BUILD_STATS_FILE), &stats)?;
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct DecodeArgs {
    pub queries: PathBuf,
    pub scorer: PathBuf,
    pub vocab: Option<PathBuf>,
    /// Prebuilt trie; built from the vocabulary when absent.
    pub trie: Option<PathBuf>,
    /// Where to write the trie that was used.
    pub save_trie: Option<PathBuf>,
    pub out: PathBuf,
}

/// Beam-decodes an entity name for every query with a tabulated scorer and
/// the byte tokenizer, writing ranked names to `predictions.jsonl`.
pub fn run_decode(cfg: &PipelineConfig, args: &DecodeArgs) -> Result<usize, PipelineError> {
    let mode = cfg.decode.mode;
    let vocab = args.vocab.as_deref().map(read_vocab).transpose()?;
    let scorer = TabulatedScorer::load(&args.scorer)
        .map_err(|e| PipelineError::data(args.scorer.display(), e))?;
    let tokenizer = ByteTokenizer;
    if crate::decode::Scorer::vocab_size(&scorer)
        != crate::decode::Tokenizer::vocab_size(&tokenizer)
    {
        return Err(PipelineError::Data(format!(
            "{}: scorer vocabulary does not match the byte tokenizer (257)",
            args.scorer.display()
        )));
    }
    let trie = match (&args.trie, mode, &vocab) {
        (Some(path), _, _) => {
            let f = fs::File::open(path).map_err(|e| PipelineError::data(path.display(), e))?;
            Some(
                TokenTrie::read_from(std::io::BufReader::new(f))
                    .map_err(|e| PipelineError::data(path.display(), e))?,
            )
        }
        (None, DecodeMode::FullTrie, Some(v)) => {
            Some(TokenTrie::build(v, &tokenizer).map_err(|e| PipelineError::Data(e.to_string()))?)
        }
        (None, DecodeMode::FullTrie, None) => {
            return Err(PipelineError::Usage(
                "full_trie decoding needs --vocab or --trie".into(),
            ))
        }
        _ => None,
    };
    if mode == DecodeMode::LastStepFilter && vocab.is_none() {
        return Err(PipelineError::Usage(
            "last_step_filter decoding needs --vocab".into(),
        ));
    }
    if let (Some(path), Some(t)) = (&args.save_trie, &trie) {
        let f = fs::File::create(path).map_err(|e| PipelineError::data(path.display(), e))?;
        let mut w = std::io::BufWriter::new(f);
        t.write_to(&mut w)
            .map_err(|e| PipelineError::data(path.display(), e))?;
        std::io::Write::flush(&mut w).map_err(|e| PipelineError::data(path.display(), e))?;
    }

    let queries: Vec<QueryRow> = read_jsonl(&args.queries)?;
    let beam = cfg.decode.beam();
    let rows: Result<Vec<PredictionRow>, PipelineError> = queries
        .par_iter()
        .map(|q| {
            let context = q.context.as_deref().unwrap_or(&q.query_id);
            let decoded = beam_search(
                &scorer,
                &tokenizer,
                context,
                mode,
                &beam,
                trie.as_ref(),
                vocab.as_ref(),
            )
            .map_err(|e| PipelineError::Usage(e.to_string()))?;
            let top: Vec<_> = decoded.into_iter().take(cfg.decode.top).collect();
            Ok(PredictionRow {
                query_id: q.query_id.clone(),
                ranked: top.iter().map(|d| d.text.clone()).collect(),
                logprobs: top.iter().map(|d| d.logprob).collect(),
            })
        })
        .collect();
    let rows = rows?;
    ensure_dir(&args.out)?;
    write_jsonl(&args.out.join(PREDICTIONS_FILE), &rows)?;
    Ok(rows.len())
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub predictions: PathBuf,
    pub gold: PathBuf,
    pub mapping: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: PathBuf,
}

/// Names to ids: vocabulary ids when a vocabulary is given, with names
/// outside it interned on demand.
struct Interner<'a> {
    vocab: Option<&'a EntityVocabulary>,
    extra: HashMap<String, EntityId>,
    next: EntityId,
}

impl<'a> Interner<'a> {
    fn new(vocab: Option<&'a EntityVocabulary>) -> Self {
        Self {
            vocab,
            extra: HashMap::new(),
            next: vocab.map_or(0, |v| v.len() as EntityId),
        }
    }

    fn known(&self, name: &str) -> Option<EntityId> {
        let norm = normalize_name(name);
        self.vocab
            .and_then(|v| v.lookup_canonical(&norm))
            .or_else(|| self.extra.get(&norm).copied())
    }

    fn intern(&mut self, name: &str) -> EntityId {
        if let Some(id) = self.known(name) {
            return id;
        }
        let id = self.next;
        self.next += 1;
        self.extra.insert(normalize_name(name), id);
        id
    }
}

/// Scores predictions against gold entities, optionally mapping dataset
/// labels to entity names first. Writes `report.json` and `report.txt`.
pub fn run_eval(cfg: &PipelineConfig, args: &EvalArgs) -> Result<EvalReport, PipelineError> {
    let vocab = args.vocab.as_deref().map(read_vocab).transpose()?;
    let mapping = match &args.mapping {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| PipelineError::data(p.display(), e))?;
            Some(LabelMapping::parse(&text).map_err(|e| PipelineError::data(p.display(), e))?)
        }
        None => None,
    };
    let gold_rows: Vec<GoldRow> = read_jsonl(&args.gold)?;
    let pred_rows: Vec<PredictionRow> = read_jsonl(&args.predictions)?;

    let mut names = Interner::new(vocab.as_ref());
    let mut golds = Vec::with_capacity(gold_rows.len());
    for g in &gold_rows {
        let name = match &mapping {
            Some(m) => m
                .get(&g.entity)
                .ok_or_else(|| {
                    PipelineError::Data(format!(
                        "gold {}: label {:?} has no mapping",
                        g.query_id, g.entity
                    ))
                })?
                .to_string(),
            None => g.entity.clone(),
        };
        let id = match names.vocab {
            Some(_) => names.known(&name).ok_or_else(|| {
                PipelineError::Data(format!(
                    "gold {}: entity {name:?} is not in the vocabulary",
                    g.query_id
                ))
            })?,
            None => names.intern(&name),
        };
        golds.push(GoldItem {
            query_id: g.query_id.clone(),
            entity: id,
            split: g.split,
        });
    }
    let preds: Vec<Prediction> = pred_rows
        .iter()
        .map(|p| Prediction {
            query_id: p.query_id.clone(),
            ranked: p.ranked.iter().map(|n| names.intern(n)).collect(),
        })
        .collect();
    let report = evaluate_with(&preds, &golds, cfg.eval.empty_split)
        .map_err(|e| PipelineError::data(args.gold.display(), e))?;
    ensure_dir(&args.out)?;
    write_json(&args.out.join(REPORT_FILE), &report)?;
    fs::write(args.out.join(REPORT_TABLE_FILE), report.to_table())
        .map_err(|e| PipelineError::data(args.out.display(), e))?;
    Ok(report)
}

fn read_json_value(path: &Path) -> Result<Value, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::data(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::data(path.display(), e))
}

/// Summary of whatever stage outputs exist in `out`.
pub fn stats(out: &Path) -> Result<Value, PipelineError> {
    if !out.is_dir() {
        return Err(PipelineError::Data(format!(
            "{} is not a directory",
            out.display()
        )));
    }
    let mut summary = serde_json::Map::new();
    for (key, file) in [
        ("assignments", ASSIGNMENTS_FILE),
        ("refined", REFINED_FILE),
        ("rejected", REJECTS_FILE),
        ("leak_removed", LEAK_REMOVED_FILE),
        ("predictions", PREDICTIONS_FILE),
    ] {
        let p = out.join(file);
        if p.exists() {
            summary.insert(key.to_string(), json!(count_lines(&p)?));
        }
    }
    for (key, file) in [
        ("refine", REFINE_STATS_FILE),
        ("build", BUILD_STATS_FILE),
        ("eval", REPORT_FILE),
    ] {
        let p = out.join(file);
        if p.exists() {
            summary.insert(key.to_string(), read_json_value(&p)?);
        }
    }
    let manifest = out.join(SHARD_DIR).join(MANIFEST_FILE);
    if manifest.exists() {
        summary.insert("manifest".to_string(), read_json_value(&manifest)?);
    }
    Ok(Value::Object(summary))
}
