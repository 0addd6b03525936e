use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use entcurate_core::decode::DecodeMode;
use entcurate_core::eval::EmptySplitPolicy;
use entcurate_core::objective::random_grad_check;
use entcurate_core::pipeline::{
    self, BuildArgs, DecodeArgs, EvalArgs, PipelineConfig, PipelineError, RefineArgs,
};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "entcurate",
    version,
    about = "Entity-centric image-text curation pipeline"
)]
struct Cli {
    /// TOML configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for stage artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Continue an interrupted refine run from its checkpoint.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign a candidate entity to each captioned image.
    Match {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Verify/correct candidates and generate rationales and QA pairs.
    Refine {
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Stop after this many newly processed records.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Leak-filter refined records and write multi-task training shards.
    Build {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        record_embeddings: Option<PathBuf>,
        #[arg(long)]
        eval_embeddings: Option<PathBuf>,
    },
    /// Beam-decode entity names for queries with a tabulated scorer.
    Decode(DecodeCmd),
    /// Score predictions against gold entities.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Two-column TSV mapping dataset labels to entity names.
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Use the other split's accuracy when one split is empty.
        #[arg(long)]
        allow_empty_split: bool,
    },
    /// Compare the loss gradient against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        v: u64,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize the artifacts in the output directory.
    Stats,
    #[command(hide = true)]
    GenFixture {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct DecodeCmd {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    scorer: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Prebuilt trie file.
    #[arg(long)]
    trie: Option<PathBuf>,
    #[arg(long)]
    save_trie: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    beam: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    max_len: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    top: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    Unconstrained,
    LastStepFilter,
    FullTrie,
}

impl From<Mode> for DecodeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Unconstrained => DecodeMode::Unconstrained,
            Mode::LastStepFilter => DecodeMode::LastStepFilter,
            Mode::FullTrie => DecodeMode::FullTrie,
        }
    }
}

fn print(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let out = cli.out.clone();
    match cli.command {
        Command::Match { corpus, vocab } => {
            let s = pipeline::run_match(&corpus, &vocab, &cfg, &out)?;
            print(json!(s));
        }
        Command::Refine {
            assignments,
            vocab,
            limit,
        } => {
            let provider = pipeline::make_provider(&cfg)?;
            let args = RefineArgs {
                assignments,
                vocab,
                out,
                resume: cli.resume,
                limit,
            };
            let s = pipeline::run_refine(provider.as_ref(), &cfg, &args)?;
            if !s.complete {
                log::info!(
                    "refine stopped after {} of {} records; rerun with --resume",
                    s.processed,
                    s.input
                );
            }
            print(json!(s));
        }
        Command::Build {
            records,
            record_embeddings,
            eval_embeddings,
        } => {
            let args = BuildArgs {
                records,
                record_embeddings,
                eval_embeddings,
                out,
            };
            print(json!(pipeline::run_build(&cfg, &args)?));
        }
        Command::Decode(d) => {
            if let Some(m) = d.mode {
                cfg.decode.mode = m.into();
            }
            if let Some(b) = d.beam {
                cfg.decode.beam_size = b as usize;
            }
            if let Some(l) = d.max_len {
                cfg.decode.max_len = l as usize;
            }
            if let Some(t) = d.top {
                cfg.decode.top = t as usize;
            }
            cfg.validate()?;
            let args = DecodeArgs {
                queries: d.queries,
                scorer: d.scorer,
                vocab: d.vocab,
                trie: d.trie,
                save_trie: d.save_trie,
                out,
            };
            let n = pipeline::run_decode(&cfg, &args)?;
            print(
                json!({ "queries": n, "mode": cfg.decode.mode, "beam_size": cfg.decode.beam_size }),
            );
        }
        Command::Eval {
            predictions,
            gold,
            mapping,
            vocab,
            allow_empty_split,
        } => {
            if allow_empty_split {
                cfg.eval.empty_split = EmptySplitPolicy::UseOther;
            }
            let args = EvalArgs {
                predictions,
                gold,
                mapping,
                vocab,
                out,
            };
            let report = pipeline::run_eval(&cfg, &args)?;
            eprint!("{}", report.to_table());
            print(json!(report));
        }
        Command::GradCheck {
            instances,
            k,
            v,
            epsilon,
            step,
            seed,
        } => {
            if !(0.0..1.0).contains(&epsilon) || step.is_nan() || step <= 0.0 {
                return Err(PipelineError::Usage(
                    "epsilon must be in [0, 1) and step positive".into(),
                ));
            }
            let err = random_grad_check(seed, instances, k as usize, v as usize, epsilon, step)
                .map_err(|e| PipelineError::Usage(e.to_string()))?;
            print(
                json!({ "instances": instances, "k": k, "v": v, "epsilon": epsilon, "max_relative_error": err }),
            );
        }
        Command::Stats => print(pipeline::stats(&out)?),
        Command::GenFixture { seed } => {
            let fx = entcurate_core::fixtures::generate_demo(seed);
            fx.write_to(&out)
                .map_err(|e| PipelineError::Data(format!("{}: {e}", out.display())))?;
            print(json!({ "files": fx.files.len(), "out": out }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
