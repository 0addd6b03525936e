#![allow(dead_code)]

use std::path::{Path, PathBuf};

use entcurate_core::fixtures::generate_demo;
use entcurate_core::pipeline::{
    self, BuildArgs, BuildStats, MatchStats, PipelineConfig, RefineArgs, RefineStats,
    ASSIGNMENTS_FILE, REFINED_FILE,
};

pub const DEMO_SEED: u64 = 7;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub struct DemoRun {
    pub data: PathBuf,
    pub out: PathBuf,
    pub cfg: PipelineConfig,
    pub matched: MatchStats,
    pub refined: RefineStats,
    pub built: BuildStats,
}

/// Writes the demo fixture into `root/data` and runs match, refine and build
/// into `root/out`.
pub fn run_demo(root: &Path) -> DemoRun {
    let data = root.join("data");
    let out = root.join("out");
    generate_demo(DEMO_SEED).write_to(&data).unwrap();
    let cfg = PipelineConfig::load(&data.join("config.toml")).unwrap();
    let matched = pipeline::run_match(
        &data.join("corpus.jsonl"),
        &data.join("vocab.jsonl"),
        &cfg,
        &out,
    )
    .unwrap();
    let provider = pipeline::make_provider(&cfg).unwrap();
    let refined = pipeline::run_refine(
        provider.as_ref(),
        &cfg,
        &RefineArgs {
            assignments: out.join(ASSIGNMENTS_FILE),
            vocab: data.join("vocab.jsonl"),
            out: out.clone(),
            resume: false,
            limit: None,
        },
    )
    .unwrap();
    let built = pipeline::run_build(
        &cfg,
        &BuildArgs {
            records: out.join(REFINED_FILE),
            record_embeddings: Some(data.join("record_embeddings.jsonl")),
            eval_embeddings: Some(data.join("eval_embeddings.jsonl")),
            out: out.clone(),
        },
    )
    .unwrap();
    DemoRun {
        data,
        out,
        cfg,
        matched,
        refined,
        built,
    }
}

/// Every file under `dir`, relative path and bytes, sorted by path.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
