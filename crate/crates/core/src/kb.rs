//! Entity vocabulary: canonical names, per-entity summaries and exact-match lookup.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Positional entity identifier inside one [`EntityVocabulary`].
pub type EntityId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KbError {
    #[error("duplicate entity name after normalization: {0:?}")]
    DuplicateName(String),
    #[error("empty entity name at row {0}")]
    EmptyName(usize),
    #[error("malformed vocabulary row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("io error reading vocabulary: {0}")]
    Io(String),
}

/// NFC, lowercase, collapse runs of whitespace into one space, trim.
pub fn normalize_name(raw: &str) -> String {
    let lowered: String = raw.nfc().flat_map(char::to_lowercase).collect();
    // Lowercasing can produce decomposed sequences (e.g. U+0130), so recompose.
    let recomposed: String = lowered.nfc().collect();
    recomposed.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: EntityId,
    pub canonical_name: String,
    pub summary: String,
}

/// One raw row of a vocabulary source before normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabRow {
    pub name: String,
    #[serde(default)]
    pub summary: String,
}

impl VocabRow {
    pub fn new(name: impl Into<String>, summary: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            summary: summary.into(),
        }
    }
}

/// Immutable entity vocabulary. Ids are positions in load order.
#[derive(Debug, Clone, Default)]
pub struct EntityVocabulary {
    records: Vec<EntityRecord>,
    name_index: HashMap<String, EntityId>,
}

impl EntityVocabulary {
    /// Builds a vocabulary from rows in order, assigning ids `0..n`.
    pub fn from_rows<I>(rows: I) -> Result<Self, KbError>
    where
        I: IntoIterator<Item = VocabRow>,
    {
        let mut records = Vec::new();
        let mut name_index = HashMap::new();
        for (row_no, row) in rows.into_iter().enumerate() {
            let name = normalize_name(&row.name);
            if name.is_empty() {
                return Err(KbError::EmptyName(row_no));
            }
            if name_index.contains_key(&name) {
                return Err(KbError::DuplicateName(name));
            }
            let id = EntityId::try_from(records.len()).expect("vocabulary exceeds u32 ids");
            name_index.insert(name.clone(), id);
            records.push(EntityRecord {
                id,
                canonical_name: name,
                summary: row.summary,
            });
        }
        Ok(Self {
            records,
            name_index,
        })
    }

    /// Reads a vocabulary source: JSON-lines (`{"name", "summary"}`) or
    /// tab-separated `name<TAB>summary`. The format is sniffed per line, blank
    /// lines are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, KbError> {
        let mut rows = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| KbError::Io(e.to_string()))?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() {
                continue;
            }
            rows.push(parse_vocab_line(trimmed, line_no)?);
        }
        Self::from_rows(rows)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn get(&self, id: EntityId) -> Option<&EntityRecord> {
        self.records.get(id as usize)
    }

    /// Id of `name` after normalization, if present.
    pub fn lookup(&self, name: &str) -> Option<EntityId> {
        self.name_index.get(&normalize_name(name)).copied()
    }

    /// Lookup for a name that is already canonical; skips normalization.
    pub fn lookup_canonical(&self, canonical: &str) -> Option<EntityId> {
        self.name_index.get(canonical).copied()
    }

    pub fn name(&self, id: EntityId) -> Option<&str> {
        self.get(id).map(|r| r.canonical_name.as_str())
    }

    pub fn index_len(&self) -> usize {
        self.name_index.len()
    }
}

fn parse_vocab_line(line: &str, line_no: usize) -> Result<VocabRow, KbError> {
    if line.trim_start().starts_with('{') {
        serde_json::from_str::<VocabRow>(line).map_err(|e| KbError::MalformedRow {
            row: line_no,
            reason: e.to_string(),
        })
    } else {
        let (name, summary) = line.split_once('\t').unwrap_or((line, ""));
        Ok(VocabRow::new(name, summary))
    }
}
