use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use entcurate_bench::{prefixes, synthetic_names, vocabulary};
use entcurate_core::decode::{
    beam_search, BeamConfig, ByteTokenizer, DecodeMode, RandomScorer, TokenTrie,
};

fn trie_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("trie_build");
    group.sample_size(10);
    for n in [10_000, 100_000] {
        let vocab = vocabulary(&synthetic_names(n, 1));
        group.bench_with_input(BenchmarkId::from_parameter(n), &vocab, |b, v| {
            b.iter(|| TokenTrie::build(v, &ByteTokenizer).unwrap())
        });
    }
    group.finish();
}

fn allowed_tokens(c: &mut Criterion) {
    let names = synthetic_names(1_000_000, 1);
    let trie = TokenTrie::build(&vocabulary(&names), &ByteTokenizer).unwrap();
    let queries = prefixes(&names, 4096, 2);
    let mut i = 0;
    c.bench_function("allowed_tokens/1M", |b| {
        b.iter(|| {
            i = (i + 1) % queries.len();
            trie.allowed_tokens(black_box(&queries[i])).len()
        })
    });
}

fn beam(c: &mut Criterion) {
    let mut group = c.benchmark_group("beam_search");
    let names = synthetic_names(100_000, 3);
    let vocab = vocabulary(&names);
    let trie = TokenTrie::build(&vocab, &ByteTokenizer).unwrap();
    let scorer = RandomScorer::new(257, 4);
    for (label, mode) in [
        ("full_trie", DecodeMode::FullTrie),
        ("last_step_filter", DecodeMode::LastStepFilter),
        ("unconstrained", DecodeMode::Unconstrained),
    ] {
        for beam_size in [5, 30] {
            let cfg = BeamConfig {
                beam_size,
                max_len: 24,
                length_penalty: 0.0,
            };
            group.bench_function(BenchmarkId::new(label, beam_size), |b| {
                b.iter(|| {
                    beam_search(
                        &scorer,
                        &ByteTokenizer,
                        "q",
                        mode,
                        &cfg,
                        Some(&trie),
                        Some(&vocab),
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, trie_build, allowed_tokens, beam);
criterion_main!(benches);
