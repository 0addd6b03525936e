use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scorer::Scorer;
use super::tokenizer::Tokenizer;
use super::trie::{NodeId, TokenTrie};
use crate::kb::{EntityId, EntityVocabulary};

pub const DEFAULT_BEAM_SIZE: usize = 30;
pub const DEFAULT_MAX_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Unconstrained,
    /// Unconstrained search, then drop outputs that are not vocabulary names.
    LastStepFilter,
    /// Only trie-allowed tokens are expanded at every step.
    FullTrie,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("full-trie decoding requires a trie")]
    MissingTrie,
    #[error("last-step filtering requires an entity vocabulary")]
    MissingVocab,
    #[error("beam size must be at least 1")]
    ZeroBeam,
    #[error("scorer returned {actual} log-probs, expected {expected}")]
    ScorerWidth { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Maximum number of generated tokens, end-of-sequence included.
    pub max_len: usize,
    /// Finished scores are `logprob / len^length_penalty`; 0 disables.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: DEFAULT_BEAM_SIZE,
            max_len: DEFAULT_MAX_LEN,
            length_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decoded {
    /// Generated tokens, ending with end-of-sequence.
    pub tokens: Vec<u32>,
    pub text: String,
    pub entity: Option<EntityId>,
    pub logprob: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<u32>,
    logprob: f64,
    node: NodeId,
}

struct Candidate {
    parent: usize,
    token: u32,
    logprob: f64,
    node: NodeId,
}

/// Sort key shared by candidates and results: higher log-prob first, then
/// lexicographically smaller token sequence.
fn rank(a_lp: f64, a_toks: &[u32], b_lp: f64, b_toks: &[u32]) -> Ordering {
    b_lp.total_cmp(&a_lp).then_with(|| a_toks.cmp(b_toks))
}

pub fn beam_search<S, T>(
    scorer: &S,
    tokenizer: &T,
    context: &str,
    mode: DecodeMode,
    config: &BeamConfig,
    trie: Option<&TokenTrie>,
    vocab: Option<&EntityVocabulary>,
) -> Result<Vec<Decoded>, DecodeError>
where
    S: Scorer + ?Sized,
    T: Tokenizer + ?Sized,
{
    if config.beam_size == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    let trie = match (mode, trie) {
        (DecodeMode::FullTrie, None) => return Err(DecodeError::MissingTrie),
        (DecodeMode::FullTrie, Some(t)) => Some(t),
        _ => None,
    };
    if mode == DecodeMode::LastStepFilter && vocab.is_none() {
        return Err(DecodeError::MissingVocab);
    }

    let beam = config.beam_size;
    let eos = tokenizer.eos_id();
    let width = scorer.vocab_size();
    let early_stop = config.length_penalty == 0.0;

    let mut active = vec![Hyp {
        tokens: Vec::new(),
        logprob: 0.0,
        node: TokenTrie::ROOT,
    }];
    let mut finished: Vec<Hyp> = Vec::new();

    for _ in 0..config.max_len {
        if active.is_empty() {
            break;
        }
        let mut cands = Vec::new();
        for (pi, h) in active.iter().enumerate() {
            let row = scorer.next_logprobs(context, &h.tokens);
            if row.len() != width {
                return Err(DecodeError::ScorerWidth {
                    expected: width,
                    actual: row.len(),
                });
            }
            match trie {
                Some(t) => {
                    for (tok, child) in t.children(h.node) {
                        let lp = row.get(tok as usize).copied().unwrap_or(f64::NEG_INFINITY);
                        cands.push(Candidate {
                            parent: pi,
                            token: tok,
                            logprob: h.logprob + lp,
                            node: child,
                        });
                    }
                }
                None => {
                    for (tok, lp) in row.iter().enumerate() {
                        cands.push(Candidate {
                            parent: pi,
                            token: tok as u32,
                            logprob: h.logprob + lp,
                            node: TokenTrie::ROOT,
                        });
                    }
                }
            }
        }
        // All candidates have equal length, so comparing (parent tokens,
        // token) is the lexicographic order on the extended sequence.
        let cmp = |a: &Candidate, b: &Candidate| {
            b.logprob
                .total_cmp(&a.logprob)
                .then_with(|| active[a.parent].tokens.cmp(&active[b.parent].tokens))
                .then_with(|| a.token.cmp(&b.token))
        };
        let keep = (2 * beam).min(cands.len());
        if keep < cands.len() {
            cands.select_nth_unstable_by(keep, cmp);
            cands.truncate(keep);
        }
        cands.sort_unstable_by(cmp);

        let mut next = Vec::with_capacity(beam);
        for (r, c) in cands.iter().enumerate() {
            if next.len() >= beam {
                break;
            }
            let mut tokens = Vec::with_capacity(active[c.parent].tokens.len() + 1);
            tokens.extend_from_slice(&active[c.parent].tokens);
            tokens.push(c.token);
            let h = Hyp {
                tokens,
                logprob: c.logprob,
                node: c.node,
            };
            if c.token == eos {
                if r < beam {
                    finished.push(h);
                }
            } else {
                next.push(h);
            }
        }
        active = next;

        if early_stop && finished.len() >= beam {
            finished.sort_by(|a, b| rank(a.logprob, &a.tokens, b.logprob, &b.tokens));
            finished.truncate(beam);
            let worst_kept = finished[beam - 1].logprob;
            let best_active = active
                .iter()
                .map(|h| h.logprob)
                .fold(f64::NEG_INFINITY, f64::max);
            // log-probs only decrease, so no active hypothesis can overtake
            if best_active < worst_kept {
                break;
            }
        }
    }

    let score = |h: &Hyp| {
        if config.length_penalty == 0.0 {
            h.logprob
        } else {
            h.logprob / (h.tokens.len() as f64).powf(config.length_penalty)
        }
    };
    let mut scored: Vec<(f64, Hyp)> = finished.into_iter().map(|h| (score(&h), h)).collect();
    scored.sort_by(|(sa, a), (sb, b)| rank(*sa, &a.tokens, *sb, &b.tokens));
    scored.truncate(beam);

    let mut out = Vec::with_capacity(scored.len());
    for (score, h) in scored {
        let text = tokenizer.decode(&h.tokens);
        let entity = match trie {
            Some(t) => t.terminal_entity(h.node),
            None => vocab.and_then(|v| v.lookup(&text)),
        };
        if mode == DecodeMode::LastStepFilter && entity.is_none() {
            continue;
        }
        out.push(Decoded {
            tokens: h.tokens,
            text,
            entity,
            logprob: h.logprob,
            score,
        });
    }
    Ok(out)
}
