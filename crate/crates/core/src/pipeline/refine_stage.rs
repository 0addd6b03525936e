use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{read_jsonl, read_vocab, write_json, AssignmentRow, RejectRow};
use super::{PipelineConfig, PipelineError, ProviderKind, PROVIDER_TOKEN_ENV, PROVIDER_URL_ENV};
use crate::matching::CandidateAssignment;
use crate::refine::{
    correction_rate, refine_record, HttpProvider, LlmProvider, RefineError, RefinedRecord,
    ScriptedProvider,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REFINED_FILE: &str = "refined.jsonl";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const REFINE_STATS_FILE: &str = "refine_stats.json";

const STAGE: &str = "refine";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageProgress {
    /// Input ids already committed, in input order.
    pub processed: Vec<String>,
    /// Committed byte length of every output file of the stage.
    pub output_bytes: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageProgress>,
}

impl Checkpoint {
    fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::data(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::data(path.display(), e))
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint.
    fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let tmp = path.with_extension("json.tmp");
        write_json(&tmp, self)?;
        fs::rename(&tmp, path).map_err(|e| PipelineError::data(path.display(), e))
    }
}

/// Provider selected by the config; HTTP credentials come from the
/// environment only.
pub fn make_provider(cfg: &PipelineConfig) -> Result<Box<dyn LlmProvider>, PipelineError> {
    match cfg.refine.provider {
        ProviderKind::Mock => {
            let dir = cfg.mock_dir().ok_or_else(|| {
                PipelineError::Usage(
                    "config: refine.mock_dir is required for the mock provider".into(),
                )
            })?;
            let p = ScriptedProvider::from_dir(&dir)
                .map_err(|e| PipelineError::data(dir.display(), e))?;
            Ok(Box::new(p))
        }
        ProviderKind::Http => {
            let url = std::env::var(PROVIDER_URL_ENV)
                .map_err(|_| PipelineError::Usage(format!("{PROVIDER_URL_ENV} is not set")))?;
            let token = std::env::var(PROVIDER_TOKEN_ENV).ok();
            let p = HttpProvider::new(url, token, Duration::from_secs(cfg.refine.timeout_secs))
                .map_err(|e| PipelineError::Provider(e.to_string()))?;
            Ok(Box::new(p))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineArgs {
    pub assignments: PathBuf,
    pub vocab: PathBuf,
    pub out: PathBuf,
    pub resume: bool,
    /// Stop after this many newly processed records.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineStats {
    pub input: usize,
    pub processed: usize,
    pub complete: bool,
    pub refined: usize,
    pub rejected: usize,
    pub validated: usize,
    pub corrected: usize,
    /// Share of refined records whose candidate was replaced.
    pub correction_rate: Option<f64>,
    pub rejected_by_stage: BTreeMap<String, usize>,
}

fn open_output(path: &Path, keep: Option<u64>) -> Result<File, PipelineError> {
    let err = |e| PipelineError::data(path.display(), e);
    match keep {
        Some(len) => {
            let f = OpenOptions::new()
                .read(true)
                .write(true)
                .create(true)
                .truncate(false)
                .open(path)
                .map_err(err)?;
            let actual = f.metadata().map_err(err)?.len();
            if actual < len {
                return Err(PipelineError::Data(format!(
                    "{} is shorter ({actual} bytes) than the checkpoint records ({len})",
                    path.display()
                )));
            }
            f.set_len(len).map_err(err)?;
            drop(f);
            OpenOptions::new().append(true).open(path).map_err(err)
        }
        None => File::create(path).map_err(err),
    }
}

fn to_assignment(
    row: &AssignmentRow,
    vocab: &crate::kb::EntityVocabulary,
) -> Result<CandidateAssignment, PipelineError> {
    let id = vocab.lookup(&row.candidate_entity).ok_or_else(|| {
        PipelineError::Data(format!(
            "assignment {}: candidate {:?} is not in the vocabulary",
            row.image_id, row.candidate_entity
        ))
    })?;
    Ok(CandidateAssignment {
        image_id: row.image_id.clone(),
        caption: row.caption.clone(),
        image_ref: row.image_ref.clone(),
        candidate_entity_id: id,
        similarity: row.similarity,
    })
}

/// Verifies, corrects and annotates every assignment, appending results in
/// input order. Provider calls run concurrently up to `refine.in_flight`;
/// progress is checkpointed after each batch so an interrupted run can be
/// resumed with identical final output.
pub fn run_refine(
    provider: &dyn LlmProvider,
    cfg: &PipelineConfig,
    args: &RefineArgs,
) -> Result<RefineStats, PipelineError> {
    let vocab = read_vocab(&args.vocab)?;
    let rows: Vec<AssignmentRow> = read_jsonl(&args.assignments)?;
    let mut ids = HashSet::new();
    let mut work = Vec::with_capacity(rows.len());
    for row in &rows {
        if !ids.insert(row.image_id.as_str()) {
            return Err(PipelineError::Data(format!(
                "duplicate image id {:?} in assignments",
                row.image_id
            )));
        }
        work.push((to_assignment(row, &vocab)?, row.caption_proxy.as_deref()));
    }

    fs::create_dir_all(&args.out).map_err(|e| PipelineError::data(args.out.display(), e))?;
    let ckpt_path = args.out.join(CHECKPOINT_FILE);
    let refined_path = args.out.join(REFINED_FILE);
    let rejects_path = args.out.join(REJECTS_FILE);
    let hash = cfg.hash();

    let mut ckpt = if args.resume && ckpt_path.exists() {
        let c = Checkpoint::load(&ckpt_path)?;
        if c.config_hash != hash {
            return Err(PipelineError::Usage(format!(
                "refusing to resume: checkpoint config hash {} differs from current {hash}",
                c.config_hash
            )));
        }
        c
    } else {
        Checkpoint {
            config_hash: hash,
            stages: BTreeMap::new(),
        }
    };
    let mut progress = ckpt.stages.remove(STAGE).unwrap_or_default();
    let resuming = args.resume && !progress.processed.is_empty();
    let keep = |name: &str| resuming.then(|| progress.output_bytes.get(name).copied().unwrap_or(0));
    let mut refined_out = open_output(&refined_path, keep(REFINED_FILE))?;
    let mut rejects_out = open_output(&rejects_path, keep(REJECTS_FILE))?;
    if !resuming {
        progress.processed.clear();
    }
    let done: HashSet<String> = progress.processed.iter().cloned().collect();
    let pending: Vec<_> = work
        .iter()
        .filter(|(a, _)| !done.contains(&a.image_id))
        .take(args.limit.unwrap_or(usize::MAX))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.refine.in_flight)
        .build()
        .map_err(|e| PipelineError::Usage(e.to_string()))?;
    let options = cfg.refine.options();
    let mut failure = None;

    'batches: for batch in pending.chunks(cfg.refine.in_flight) {
        let results: Vec<_> = pool.install(|| {
            batch
                .par_iter()
                .map(|(a, proxy)| refine_record(provider, a, &vocab, &options, *proxy))
                .collect()
        });
        for ((a, _), result) in batch.iter().zip(results) {
            match result {
                Ok(rec) => append_line(&mut refined_out, &refined_path, &rec)?,
                Err(RefineError::RecordRejected {
                    image_id,
                    stage,
                    reason,
                    raw_response,
                }) => {
                    let row = RejectRow {
                        image_id,
                        stage: stage.to_string(),
                        reason: reason.to_string(),
                        raw_response,
                    };
                    append_line(&mut rejects_out, &rejects_path, &row)?;
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
            progress.processed.push(a.image_id.clone());
        }
        refined_out
            .flush()
            .map_err(|e| PipelineError::data(refined_path.display(), e))?;
        rejects_out
            .flush()
            .map_err(|e| PipelineError::data(rejects_path.display(), e))?;
        progress.output_bytes = BTreeMap::from([
            (REFINED_FILE.to_string(), file_len(&refined_path)?),
            (REJECTS_FILE.to_string(), file_len(&rejects_path)?),
        ]);
        ckpt.stages.insert(STAGE.to_string(), progress.clone());
        ckpt.save(&ckpt_path)?;
        if failure.is_some() {
            break 'batches;
        }
    }

    if let Some(e) = failure {
        return Err(match e {
            RefineError::Provider { .. } => PipelineError::Provider(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        });
    }

    if pending.is_empty() {
        ckpt.stages.insert(STAGE.to_string(), progress.clone());
        ckpt.save(&ckpt_path)?;
    }
    let processed = progress.processed.len();
    let stats = compute_stats(&refined_path, &rejects_path, rows.len(), processed)?;
    write_json(&args.out.join(REFINE_STATS_FILE), &stats)?;
    Ok(stats)
}

fn append_line<T: Serialize>(f: &mut File, path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut line = serde_json::to_vec(value).expect("row serializes");
    line.push(b'\n');
    f.write_all(&line)
        .map_err(|e| PipelineError::data(path.display(), e))
}

fn file_len(path: &Path) -> Result<u64, PipelineError> {
    Ok(fs::metadata(path)
        .map_err(|e| PipelineError::data(path.display(), e))?
        .len())
}

fn compute_stats(
    refined: &Path,
    rejects: &Path,
    input: usize,
    processed: usize,
) -> Result<RefineStats, PipelineError> {
    let records: Vec<RefinedRecord> = read_jsonl(refined)?;
    let rejected: Vec<RejectRow> = read_jsonl(rejects)?;
    let corrected = records.iter().filter(|r| r.is_corrected()).count();
    let mut by_stage = BTreeMap::new();
    for r in &rejected {
        *by_stage.entry(r.stage.clone()).or_insert(0) += 1;
    }
    Ok(RefineStats {
        input,
        processed,
        complete: processed == input,
        refined: records.len(),
        rejected: rejected.len(),
        validated: records.len() - corrected,
        corrected,
        correction_rate: correction_rate(&records).ok(),
        rejected_by_stage: by_stage,
    })
}

/// Number of lines in a JSON-lines file; used by `stats`.
pub(crate) fn count_lines(path: &Path) -> Result<usize, PipelineError> {
    let f = File::open(path).map_err(|e| PipelineError::data(path.display(), e))?;
    let mut n = 0;
    for line in BufReader::new(f).lines() {
        if !line
            .map_err(|e| PipelineError::data(path.display(), e))?
            .trim()
            .is_empty()
        {
            n += 1;
        }
    }
    Ok(n)
}
