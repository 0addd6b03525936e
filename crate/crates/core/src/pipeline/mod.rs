//! Stage runners behind the command-line tool: file formats, configuration
//! and resumable refinement.

mod config;
mod io;
mod refine_stage;
mod stages;

use thiserror::Error;

pub use config::{
    BuildConfig, DecodeConfig, EmbedderKind, EvalConfig, MatchingConfig, PipelineConfig,
    ProviderKind, RefineConfig, PROVIDER_TOKEN_ENV, PROVIDER_URL_ENV,
};
pub use io::{
    read_embeddings, read_jsonl, read_vocab, write_json, write_jsonl, AssignmentRow, CorpusRow,
    EmbeddingRow, GoldRow, PredictionRow, QueryRow, RejectRow,
};
pub use refine_stage::{
    make_provider, run_refine, Checkpoint, RefineArgs, RefineStats, CHECKPOINT_FILE, REFINED_FILE,
    REFINE_STATS_FILE, REJECTS_FILE,
};
pub use stages::{
    run_build, run_decode, run_eval, run_match, stats, BuildArgs, BuildStats, DecodeArgs, EvalArgs,
    MatchStats, ASSIGNMENTS_FILE, BUILD_STATS_FILE, LEAK_REMOVED_FILE, PREDICTIONS_FILE,
    REPORT_FILE, REPORT_TABLE_FILE, SHARD_DIR,
};

/// Failure of a pipeline stage, classified by process exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad invocation or configuration.
    #[error("{0}")]
    Usage(String),
    /// Missing, unreadable or invalid input data.
    #[error("{0}")]
    Data(String),
    /// The language-model provider kept failing after all retries.
    #[error("{0}")]
    Provider(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Provider(_) => 3,
        }
    }

    pub(crate) fn data(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        PipelineError::Data(format!("{context}: {err}"))
    }
}
