mod common;

use std::fs;
use std::path::Path;

use entcurate_core::eval::Split;
use entcurate_core::fixtures::generate_demo;
use entcurate_core::pipeline::{
    self, read_jsonl, write_jsonl, CorpusRow, EvalArgs, GoldRow, PipelineConfig, PredictionRow,
    RefineArgs, RejectRow, ASSIGNMENTS_FILE, CHECKPOINT_FILE, REFINED_FILE, REJECTS_FILE,
};
use entcurate_core::refine::{render_verification_prompt, ProviderRequest, ScriptedProvider};

fn refine_args(data: &Path, out: &Path, resume: bool, limit: Option<usize>) -> RefineArgs {
    RefineArgs {
        assignments: out.join(ASSIGNMENTS_FILE),
        vocab: data.join("vocab.jsonl"),
        out: out.to_path_buf(),
        resume,
        limit,
    }
}

#[test]
fn bundled_fixture_matches_generator() {
    let bundled = common::tree(&common::workspace_root().join("fixtures/demo"));
    let generated: Vec<_> = generate_demo(common::DEMO_SEED).files.into_iter().collect();
    assert_eq!(bundled.len(), generated.len());
    for ((pa, a), (pb, b)) in bundled.iter().zip(&generated) {
        assert_eq!(pa, pb);
        assert!(a == b, "{} drifted from the generator", pa.display());
    }
}

#[test]
fn interrupted_refine_resumes_to_identical_output() {
    let full = tempfile::tempdir().unwrap();
    let reference = common::run_demo(full.path());

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    generate_demo(common::DEMO_SEED).write_to(&data).unwrap();
    let cfg = PipelineConfig::load(&data.join("config.toml")).unwrap();
    pipeline::run_match(
        &data.join("corpus.jsonl"),
        &data.join("vocab.jsonl"),
        &cfg,
        &out,
    )
    .unwrap();
    let provider = pipeline::make_provider(&cfg).unwrap();

    let first = pipeline::run_refine(
        provider.as_ref(),
        &cfg,
        &refine_args(&data, &out, false, Some(13)),
    )
    .unwrap();
    assert_eq!(first.processed, 13);
    assert!(!first.complete);
    // Garbage past the committed length, as left by a crash mid-write.
    let mut refined = fs::read(out.join(REFINED_FILE)).unwrap();
    refined.extend_from_slice(b"{\"partial");
    fs::write(out.join(REFINED_FILE), refined).unwrap();

    let second = pipeline::run_refine(
        provider.as_ref(),
        &cfg,
        &refine_args(&data, &out, true, Some(10)),
    )
    .unwrap();
    assert_eq!(second.processed, 23);
    let last = pipeline::run_refine(
        provider.as_ref(),
        &cfg,
        &refine_args(&data, &out, true, None),
    )
    .unwrap();
    assert!(last.complete);
    assert_eq!(last, reference.refined);
    for f in [REFINED_FILE, REJECTS_FILE] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(reference.out.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn resume_refuses_a_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    generate_demo(common::DEMO_SEED).write_to(&data).unwrap();
    let mut cfg = PipelineConfig::load(&data.join("config.toml")).unwrap();
    pipeline::run_match(
        &data.join("corpus.jsonl"),
        &data.join("vocab.jsonl"),
        &cfg,
        &out,
    )
    .unwrap();
    let provider = pipeline::make_provider(&cfg).unwrap();
    pipeline::run_refine(
        provider.as_ref(),
        &cfg,
        &refine_args(&data, &out, false, Some(5)),
    )
    .unwrap();
    let before = fs::read(out.join(CHECKPOINT_FILE)).unwrap();

    cfg.refine.retries = 0;
    let err = pipeline::run_refine(
        provider.as_ref(),
        &cfg,
        &refine_args(&data, &out, true, None),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    assert!(err.to_string().contains("config hash"));
    assert_eq!(fs::read(out.join(CHECKPOINT_FILE)).unwrap(), before);
}

#[test]
fn garbage_responses_reject_everything() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    generate_demo(common::DEMO_SEED).write_to(&data).unwrap();
    let mock = data.join("mock");
    for entry in fs::read_dir(&mock).unwrap() {
        fs::write(entry.unwrap().path(), "I cannot help with that.").unwrap();
    }
    let cfg = PipelineConfig::load(&data.join("config.toml")).unwrap();
    let matched = pipeline::run_match(
        &data.join("corpus.jsonl"),
        &data.join("vocab.jsonl"),
        &cfg,
        &out,
    )
    .unwrap();
    let provider = pipeline::make_provider(&cfg).unwrap();
    let stats = pipeline::run_refine(
        provider.as_ref(),
        &cfg,
        &refine_args(&data, &out, false, None),
    )
    .unwrap();
    assert_eq!(stats.refined, 0);
    assert_eq!(stats.rejected, matched.assigned);
    assert_eq!(stats.correction_rate, None);
    let rejects: Vec<RejectRow> = read_jsonl(&out.join(REJECTS_FILE)).unwrap();
    assert!(rejects
        .iter()
        .all(|r| r.stage == "verification" && r.raw_response == "I cannot help with that."));

    let built = pipeline::run_build(
        &cfg,
        &pipeline::BuildArgs {
            records: out.join(REFINED_FILE),
            record_embeddings: None,
            eval_embeddings: None,
            out: out.clone(),
        },
    )
    .unwrap();
    assert_eq!((built.kept, built.examples), (0, 0));
}

#[test]
fn provider_outage_stops_with_exit_3_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    generate_demo(common::DEMO_SEED).write_to(&data).unwrap();
    let cfg = PipelineConfig::load(&data.join("config.toml")).unwrap();
    pipeline::run_match(
        &data.join("corpus.jsonl"),
        &data.join("vocab.jsonl"),
        &cfg,
        &out,
    )
    .unwrap();
    let full = pipeline::make_provider(&cfg).unwrap();

    // Remove the verification response of the eleventh assignment.
    let scripted = ScriptedProvider::from_dir(&cfg.mock_dir().unwrap()).unwrap();
    let assignments: Vec<pipeline::AssignmentRow> =
        read_jsonl(&out.join(ASSIGNMENTS_FILE)).unwrap();
    let vocab = pipeline::read_vocab(&data.join("vocab.jsonl")).unwrap();
    let eleventh = &assignments[10];
    let cand = vocab
        .get(vocab.lookup(&eleventh.candidate_entity).unwrap())
        .unwrap();
    let prompt = render_verification_prompt(
        &cand.canonical_name,
        &cand.summary,
        &eleventh.caption,
        eleventh.caption_proxy.as_deref(),
    );
    let image = (cfg.refine.send_image && !eleventh.image_ref.is_empty())
        .then(|| eleventh.image_ref.clone());
    let key = ProviderRequest::new(prompt, image).key();
    let mut without = ScriptedProvider::new();
    for (k, v) in scripted.entries() {
        if k != key {
            without.insert_key(k.to_string(), v);
        }
    }
    assert_eq!(without.len() + 1, scripted.len());

    let err =
        pipeline::run_refine(&without, &cfg, &refine_args(&data, &out, false, None)).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let ckpt: pipeline::Checkpoint =
        serde_json::from_str(&fs::read_to_string(out.join(CHECKPOINT_FILE)).unwrap()).unwrap();
    let done = &ckpt.stages["refine"].processed;
    assert_eq!(done.len(), 10);
    assert!(done.iter().zip(&assignments).all(|(a, b)| *a == b.image_id));

    let stats =
        pipeline::run_refine(full.as_ref(), &cfg, &refine_args(&data, &out, true, None)).unwrap();
    assert!(stats.complete);
    let reference = tempfile::tempdir().unwrap();
    let r = common::run_demo(reference.path());
    assert_eq!(stats, r.refined);
    assert_eq!(
        fs::read(out.join(REFINED_FILE)).unwrap(),
        fs::read(r.out.join(REFINED_FILE)).unwrap()
    );
}

#[test]
fn empty_corpus_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    generate_demo(common::DEMO_SEED).write_to(&data).unwrap();
    fs::write(data.join("corpus.jsonl"), "").unwrap();
    let cfg = PipelineConfig::load(&data.join("config.toml")).unwrap();
    let m = pipeline::run_match(
        &data.join("corpus.jsonl"),
        &data.join("vocab.jsonl"),
        &cfg,
        &out,
    )
    .unwrap();
    assert_eq!((m.images, m.assigned), (0, 0));
    let provider = pipeline::make_provider(&cfg).unwrap();
    let s = pipeline::run_refine(
        provider.as_ref(),
        &cfg,
        &refine_args(&data, &out, false, None),
    )
    .unwrap();
    assert!(s.complete);
    assert_eq!(s.refined + s.rejected, 0);
}

#[test]
fn duplicate_image_ids_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate_demo(common::DEMO_SEED).write_to(&data).unwrap();
    let row = CorpusRow {
        image_id: "x".into(),
        caption: "a bridge".into(),
        image_ref: String::new(),
        caption_proxy: None,
    };
    write_jsonl(&data.join("corpus.jsonl"), &[row.clone(), row]).unwrap();
    let cfg = PipelineConfig::load(&data.join("config.toml")).unwrap();
    let err = pipeline::run_match(
        &data.join("corpus.jsonl"),
        &data.join("vocab.jsonl"),
        &cfg,
        &dir.path().join("out"),
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn mapped_labels_evaluate_against_entity_names() {
    let dir = tempfile::tempdir().unwrap();
    let mapping = common::workspace_root().join("fixtures/mappings/flowers.tsv");
    let gold = vec![
        ("q1", "pink primrose", Split::Seen),
        ("q2", "tiger lily", Split::Seen),
        ("q3", "bird of paradise", Split::Unseen),
        ("q4", "snapdragon", Split::Unseen),
    ];
    let gold: Vec<GoldRow> = gold
        .into_iter()
        .map(|(q, label, split)| GoldRow {
            query_id: q.into(),
            entity: label.into(),
            split,
            question: String::new(),
        })
        .collect();
    let pred = |q: &str, ranked: &[&str]| PredictionRow {
        query_id: q.into(),
        ranked: ranked.iter().map(|s| s.to_string()).collect(),
        logprobs: Vec::new(),
    };
    let preds = vec![
        pred("q1", &["Oenothera Speciosa"]),
        pred("q2", &["pink primrose", "lilium lancifolium"]),
        pred("q3", &["strelitzia"]),
        pred("q4", &["echinops"]),
    ];
    write_jsonl(&dir.path().join("gold.jsonl"), &gold).unwrap();
    write_jsonl(&dir.path().join("pred.jsonl"), &preds).unwrap();
    let args = EvalArgs {
        predictions: dir.path().join("pred.jsonl"),
        gold: dir.path().join("gold.jsonl"),
        mapping: Some(mapping),
        vocab: None,
        out: dir.path().join("out"),
    };
    let report = pipeline::run_eval(&PipelineConfig::default(), &args).unwrap();
    assert_eq!((report.acc_seen, report.acc_unseen), (0.5, 0.5));
    assert_eq!(report.per_k[1].seen, 1.0);

    // A label missing from the mapping is a data error.
    let mut bad = gold.clone();
    bad[0].entity = "not a flower".into();
    write_jsonl(&dir.path().join("gold.jsonl"), &bad).unwrap();
    assert_eq!(
        pipeline::run_eval(&PipelineConfig::default(), &args)
            .unwrap_err()
            .exit_code(),
        2
    );
}

#[test]
fn mapping_files_are_complete() {
    let root = common::workspace_root().join("fixtures/mappings");
    for (file, rows) in [("flowers.tsv", 102), ("aircraft.tsv", 70)] {
        let text = fs::read_to_string(root.join(file)).unwrap();
        let m = entcurate_core::eval::LabelMapping::parse(&text).unwrap();
        assert_eq!(m.len(), rows, "{file}");
    }
}
