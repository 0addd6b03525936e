//! Entity-name generation: token trie and beam search.

mod beam;
mod scorer;
mod tokenizer;
mod trie;

pub use beam::{
    beam_search, BeamConfig, DecodeError, DecodeMode, Decoded, DEFAULT_BEAM_SIZE, DEFAULT_MAX_LEN,
};
pub use scorer::{RandomScorer, Scorer, ScorerError, TabulatedScorer};
pub use tokenizer::{ByteTokenizer, Tokenizer};
pub use trie::{NodeId, TokenTrie, TrieError};
