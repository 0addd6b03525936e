//! Prefix tree over tokenized entity names.
//!
//! Every name is stored followed by the end-of-sequence token; the node
//! reached through that final edge is a leaf carrying the entity id. Nodes
//! are laid out breadth-first with their children in one contiguous,
//! token-sorted run of the edge arrays.

use std::collections::VecDeque;
use std::io::{self, Read, Write};

use thiserror::Error;

use super::tokenizer::Tokenizer;
use crate::kb::{EntityId, EntityVocabulary};

pub type NodeId = u32;

const NO_ENTITY: u32 = u32::MAX;
const MAGIC: &[u8; 4] = b"RWTR";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TrieError {
    #[error("tokenizer does not round-trip entity {0:?}")]
    TokenizerRoundTripFailure(String),
    #[error("entity {0:?} tokenizes to an empty sequence")]
    EmptyEncoding(String),
    #[error("entity name {0:?} contains the end-of-sequence token")]
    EosInName(String),
    #[error("two entities share the token sequence of {0:?}")]
    DuplicateSequence(String),
    #[error("trie too large for 32-bit node ids")]
    TooLarge,
    #[error("bad trie file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTrie {
    /// children of node `n` are `edge_*[offsets[n]..offsets[n + 1]]`
    offsets: Vec<u32>,
    edge_tokens: Vec<u32>,
    edge_targets: Vec<NodeId>,
    entity: Vec<u32>,
    eos_id: u32,
}

impl TokenTrie {
    pub const ROOT: NodeId = 0;

    /// Builds the trie over every vocabulary entity. Insertion order does
    /// not affect the result.
    pub fn build<T: Tokenizer + ?Sized>(
        vocab: &EntityVocabulary,
        tokenizer: &T,
    ) -> Result<Self, TrieError> {
        let eos = tokenizer.eos_id();
        let mut seqs: Vec<(Vec<u32>, EntityId)> = Vec::with_capacity(vocab.len());
        for rec in vocab.records() {
            let mut toks = tokenizer.encode(&rec.canonical_name);
            if toks.is_empty() {
                return Err(TrieError::EmptyEncoding(rec.canonical_name.clone()));
            }
            if toks.contains(&eos) {
                return Err(TrieError::EosInName(rec.canonical_name.clone()));
            }
            if tokenizer.decode(&toks) != rec.canonical_name {
                return Err(TrieError::TokenizerRoundTripFailure(
                    rec.canonical_name.clone(),
                ));
            }
            toks.push(eos);
            seqs.push((toks, rec.id));
        }
        Self::from_sequences(seqs, eos, vocab)
    }

    fn from_sequences(
        mut seqs: Vec<(Vec<u32>, EntityId)>,
        eos: u32,
        vocab: &EntityVocabulary,
    ) -> Result<Self, TrieError> {
        seqs.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = seqs.windows(2).find(|w| w[0].0 == w[1].0) {
            let name = vocab.name(w[1].1).unwrap_or_default().to_string();
            return Err(TrieError::DuplicateSequence(name));
        }

        let mut offsets = Vec::new();
        let mut edge_tokens = Vec::new();
        let mut edge_targets = Vec::new();
        let mut entity = vec![NO_ENTITY];
        // (lo, hi, depth) of the sequences sharing each queued node's prefix;
        // nodes are dequeued in id order.
        let mut queue: VecDeque<(usize, usize, usize)> = VecDeque::new();
        queue.push_back((0, seqs.len(), 0));
        while let Some((lo, hi, depth)) = queue.pop_front() {
            offsets.push(u32::try_from(edge_tokens.len()).map_err(|_| TrieError::TooLarge)?);
            let mut i = lo;
            while i < hi {
                if seqs[i].0.len() <= depth {
                    i += 1;
                    continue;
                }
                let tok = seqs[i].0[depth];
                let mut j = i + 1;
                while j < hi && seqs[j].0.get(depth) == Some(&tok) {
                    j += 1;
                }
                let child = u32::try_from(entity.len()).map_err(|_| TrieError::TooLarge)?;
                edge_tokens.push(tok);
                edge_targets.push(child);
                entity.push(if tok == eos { seqs[i].1 } else { NO_ENTITY });
                queue.push_back((i, j, depth + 1));
                i = j;
            }
        }
        offsets.push(u32::try_from(edge_tokens.len()).map_err(|_| TrieError::TooLarge)?);
        Ok(Self {
            offsets,
            edge_tokens,
            edge_targets,
            entity,
            eos_id: eos,
        }
        .into_preorder())
    }

    /// Renumbers nodes in depth-first preorder so that a walk down one name
    /// touches neighbouring memory.
    fn into_preorder(self) -> Self {
        let n = self.node_count();
        let mut order = Vec::with_capacity(n);
        let mut new_id = vec![0u32; n];
        let mut stack = vec![Self::ROOT];
        while let Some(node) = stack.pop() {
            new_id[node as usize] = order.len() as u32;
            order.push(node);
            let r = self.child_range(node);
            stack.extend(self.edge_targets[r].iter().rev());
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut edge_tokens = Vec::with_capacity(self.edge_tokens.len());
        let mut edge_targets = Vec::with_capacity(self.edge_targets.len());
        let mut entity = Vec::with_capacity(n);
        for &old in &order {
            offsets.push(edge_tokens.len() as u32);
            let r = self.child_range(old);
            edge_tokens.extend_from_slice(&self.edge_tokens[r.clone()]);
            edge_targets.extend(self.edge_targets[r].iter().map(|&c| new_id[c as usize]));
            entity.push(self.entity[old as usize]);
        }
        offsets.push(edge_tokens.len() as u32);
        Self {
            offsets,
            edge_tokens,
            edge_targets,
            entity,
            eos_id: self.eos_id,
        }
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn node_count(&self) -> usize {
        self.entity.len()
    }

    pub fn terminal_count(&self) -> usize {
        self.entity.iter().filter(|&&e| e != NO_ENTITY).count()
    }

    #[inline]
    fn child_range(&self, node: NodeId) -> std::ops::Range<usize> {
        self.offsets[node as usize] as usize..self.offsets[node as usize + 1] as usize
    }

    /// Sorted tokens that may follow `node`.
    #[inline]
    pub fn child_tokens(&self, node: NodeId) -> &[u32] {
        &self.edge_tokens[self.child_range(node)]
    }

    pub fn children(&self, node: NodeId) -> impl Iterator<Item = (u32, NodeId)> + '_ {
        let r = self.child_range(node);
        self.edge_tokens[r.clone()]
            .iter()
            .copied()
            .zip(self.edge_targets[r].iter().copied())
    }

    #[inline]
    pub fn child(&self, node: NodeId, token: u32) -> Option<NodeId> {
        let r = self.child_range(node);
        let toks = &self.edge_tokens[r.clone()];
        toks.binary_search(&token)
            .ok()
            .map(|i| self.edge_targets[r.start + i])
    }

    /// Node reached by following `prefix` from the root.
    pub fn walk(&self, prefix: &[u32]) -> Option<NodeId> {
        prefix
            .iter()
            .try_fold(Self::ROOT, |node, &tok| self.child(node, tok))
    }

    /// Tokens allowed after `prefix`; empty when the prefix leaves the trie.
    /// The end-of-sequence token is included iff `prefix` spells a full name.
    pub fn allowed_tokens(&self, prefix: &[u32]) -> &[u32] {
        match self.walk(prefix) {
            Some(node) => self.child_tokens(node),
            None => &[],
        }
    }

    pub fn terminal_entity(&self, node: NodeId) -> Option<EntityId> {
        let e = self.entity[node as usize];
        (e != NO_ENTITY).then_some(e)
    }

    /// Serializes as: magic `RWTR`, u16 version, u32 eos id, u64 node count,
    /// u64 edge count, then per node (first edge, child count, entity) as
    /// u32 triples, then per edge (token, target) as u32 pairs. Little endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TrieError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.eos_id.to_le_bytes())?;
        w.write_all(&(self.node_count() as u64).to_le_bytes())?;
        w.write_all(&(self.edge_tokens.len() as u64).to_le_bytes())?;
        for n in 0..self.node_count() {
            let start = self.offsets[n];
            let count = self.offsets[n + 1] - start;
            w.write_all(&start.to_le_bytes())?;
            w.write_all(&count.to_le_bytes())?;
            w.write_all(&self.entity[n].to_le_bytes())?;
        }
        for (t, c) in self.edge_tokens.iter().zip(&self.edge_targets) {
            w.write_all(&t.to_le_bytes())?;
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TrieError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TrieError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(TrieError::Format(format!("unsupported version {version}")));
        }
        let eos_id = u32::from_le_bytes(read_array(&mut r)?);
        let nodes = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let edges = u64::from_le_bytes(read_array(&mut r)?) as usize;
        if nodes == 0 || nodes > u32::MAX as usize || edges > u32::MAX as usize {
            return Err(TrieError::Format("bad table sizes".into()));
        }
        let mut offsets = Vec::with_capacity(nodes + 1);
        let mut entity = Vec::with_capacity(nodes);
        let mut expected_start = 0u32;
        for _ in 0..nodes {
            let start = u32::from_le_bytes(read_array(&mut r)?);
            let count = u32::from_le_bytes(read_array(&mut r)?);
            if start != expected_start {
                return Err(TrieError::Format("non-contiguous child runs".into()));
            }
            expected_start = start
                .checked_add(count)
                .ok_or_else(|| TrieError::Format("edge overflow".into()))?;
            offsets.push(start);
            entity.push(u32::from_le_bytes(read_array(&mut r)?));
        }
        if expected_start as usize != edges {
            return Err(TrieError::Format("edge count mismatch".into()));
        }
        offsets.push(expected_start);
        let mut edge_tokens = Vec::with_capacity(edges);
        let mut edge_targets = Vec::with_capacity(edges);
        for _ in 0..edges {
            edge_tokens.push(u32::from_le_bytes(read_array(&mut r)?));
            let target = u32::from_le_bytes(read_array(&mut r)?);
            if target as usize >= nodes {
                return Err(TrieError::Format("edge target out of range".into()));
            }
            edge_targets.push(target);
        }
        Ok(Self {
            offsets,
            edge_tokens,
            edge_targets,
            entity,
            eos_id,
        })
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::tokenizer::ByteTokenizer;
    use crate::kb::VocabRow;

    fn vocab(names: &[&str]) -> EntityVocabulary {
        EntityVocabulary::from_rows(names.iter().map(|n| VocabRow::new(*n, ""))).unwrap()
    }

    fn t(s: &str) -> Vec<u32> {
        ByteTokenizer.encode(s)
    }

    #[test]
    fn single_name_chain() {
        let trie = TokenTrie::build(&vocab(&["ab"]), &ByteTokenizer).unwrap();
        assert_eq!(trie.node_count(), 4);
        assert_eq!(trie.allowed_tokens(&[]), &t("a")[..]);
        assert_eq!(trie.allowed_tokens(&t("a")), &t("b")[..]);
        assert_eq!(trie.allowed_tokens(&t("ab")), &[ByteTokenizer::EOS]);
        let mut path = t("ab");
        path.push(ByteTokenizer::EOS);
        let leaf = trie.walk(&path).unwrap();
        assert_eq!(trie.terminal_entity(leaf), Some(0));
        assert!(trie.child_tokens(leaf).is_empty());
    }

    #[test]
    fn shared_prefix() {
        let trie = TokenTrie::build(&vocab(&["ac", "ab"]), &ByteTokenizer).unwrap();
        let a = trie.walk(&t("a")).unwrap();
        assert_eq!(trie.child_tokens(a), &t("bc")[..]);
        assert_eq!(trie.children(TokenTrie::ROOT).count(), 1);
        assert_eq!(trie.terminal_count(), 2);
    }

    #[test]
    fn name_that_is_prefix_of_another() {
        let trie = TokenTrie::build(&vocab(&["ab", "a"]), &ByteTokenizer).unwrap();
        let allowed = trie.allowed_tokens(&t("a"));
        assert_eq!(allowed, &[b'b' as u32, ByteTokenizer::EOS]);
    }

    #[test]
    fn off_trie_prefix_is_empty() {
        let trie = TokenTrie::build(&vocab(&["ab", "ac"]), &ByteTokenizer).unwrap();
        assert!(trie.allowed_tokens(&t("z")).is_empty());
        assert!(trie.allowed_tokens(&t("abc")).is_empty());
    }

    #[test]
    fn insertion_order_irrelevant() {
        let a = TokenTrie::build(&vocab(&["b", "ab", "ac"]), &ByteTokenizer).unwrap();
        let b = TokenTrie::build(&vocab(&["ac", "b", "ab"]), &ByteTokenizer).unwrap();
        assert_eq!(a.offsets, b.offsets);
        assert_eq!(a.edge_tokens, b.edge_tokens);
        assert_eq!(a.edge_targets, b.edge_targets);
        assert_eq!(a.node_count(), b.node_count());
    }

    struct Lossy;
    impl Tokenizer for Lossy {
        fn encode(&self, text: &str) -> Vec<u32> {
            text.bytes().filter(|b| *b != b' ').map(u32::from).collect()
        }
        fn decode(&self, tokens: &[u32]) -> String {
            ByteTokenizer.decode(tokens)
        }
        fn eos_id(&self) -> u32 {
            256
        }
        fn vocab_size(&self) -> usize {
            257
        }
    }

    #[test]
    fn round_trip_failure_reported() {
        let err = TokenTrie::build(&vocab(&["boeing 707"]), &Lossy).unwrap_err();
        assert!(matches!(err, TrieError::TokenizerRoundTripFailure(n) if n == "boeing 707"));
    }

    #[test]
    fn serialization_round_trip() {
        let trie =
            TokenTrie::build(&vocab(&["ab", "ac", "b", "bronte baths"]), &ByteTokenizer).unwrap();
        let mut buf = Vec::new();
        trie.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"RWTR");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        let back = TokenTrie::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, trie);
    }

    #[test]
    fn corrupted_file_rejected() {
        let trie = TokenTrie::build(&vocab(&["ab"]), &ByteTokenizer).unwrap();
        let mut buf = Vec::new();
        trie.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            TokenTrie::read_from(bad.as_slice()),
            Err(TrieError::Format(_))
        ));
        let truncated = &buf[..buf.len() - 3];
        assert!(TokenTrie::read_from(truncated).is_err());
    }
}
