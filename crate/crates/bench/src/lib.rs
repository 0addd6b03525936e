//! Shared input generators for the benchmarks.

use entcurate_core::decode::{ByteTokenizer, Tokenizer};
use entcurate_core::kb::VocabRow;
use entcurate_core::{EmbeddingMatrix, EntityVocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "an", "el", "or", "us", "ber", "dan", "fer",
    "gor", "hal", "jin", "kel", "mor", "nor", "pel", "quin", "ros", "sten", "tor", "val", "wes",
    "yar", "zel", "bri", "cla",
];

/// `n` distinct two-word pseudo names. The second word encodes the index,
/// so names never collide.
pub fn synthetic_names(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut word = String::new();
            let mut x = i;
            loop {
                word.push_str(SYLLABLES[x % SYLLABLES.len()]);
                x /= SYLLABLES.len();
                if x == 0 {
                    break;
                }
            }
            let lead = SYLLABLES[rng.gen_range(0..SYLLABLES.len())];
            let tail = SYLLABLES[rng.gen_range(0..SYLLABLES.len())];
            format!("{lead}{tail} {word}")
        })
        .collect()
}

pub fn vocabulary(names: &[String]) -> EntityVocabulary {
    EntityVocabulary::from_rows(names.iter().map(|n| VocabRow::new(n.as_str(), "")))
        .expect("unique names")
}

/// Random byte-token prefixes of random names, from empty up to the full
/// name.
pub fn prefixes(names: &[String], count: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let toks = ByteTokenizer.encode(&names[rng.gen_range(0..names.len())]);
            let cut = rng.gen_range(0..=toks.len());
            toks[..cut].to_vec()
        })
        .collect()
}

pub fn random_unit_rows(n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingMatrix::from_rows(
        dim,
        (0..n).map(|_| {
            (0..dim)
                .map(|_| rng.gen_range(-1.0f32..1.0))
                .collect::<Vec<_>>()
        }),
    )
    .expect("non-zero rows")
}
