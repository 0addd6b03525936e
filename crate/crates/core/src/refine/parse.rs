//! Parsers for the verification and QA responses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::FORBIDDEN_QUESTION;
use crate::kb::normalize_name;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("response has neither a YES nor a NO verdict")]
    MissingVerdict,
    #[error("NO verdict without an @entity@ correction")]
    MissingCorrection,
    #[error("rationale is empty")]
    EmptyRationale,
    #[error("expected 3 question/answer pairs, found {0}")]
    TooFewPairs(usize),
    #[error("pair {0} asks the forbidden generic question")]
    ForbiddenQuestion(usize),
    #[error("pair {0} has an empty question or answer")]
    EmptyField(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Validated,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub verdict: Verdict,
    #[serde(rename = "entity")]
    pub entity_name: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

// Leading decoration tolerated around the verdict word, e.g. `'YES'` or `**NO**`.
const DECORATION: &[char] = &['\'', '"', '*', '`'];
const SEPARATORS: &[char] = &['\'', '"', '*', '`', '.', ',', ':', ';', '-', '!'];

fn strip_separators(s: &str) -> &str {
    s.trim_start_matches(|c: char| c.is_whitespace() || SEPARATORS.contains(&c))
        .trim()
}

/// Matches a case-insensitive verdict word at the start of `s` that is not
/// the prefix of a longer word. Returns the remainder on success.
fn strip_verdict<'a>(s: &'a str, word: &str) -> Option<&'a str> {
    let head = s.get(..word.len())?;
    if !head.eq_ignore_ascii_case(word) {
        return None;
    }
    let rest = &s[word.len()..];
    match rest.chars().next() {
        Some(c) if c.is_alphanumeric() => None,
        _ => Some(rest),
    }
}

/// Parses a YES / NO @entity@ response. A validated outcome always carries
/// `candidate_name` as its entity.
pub fn parse_verification_response(
    raw: &str,
    candidate_name: &str,
) -> Result<VerificationOutcome, ParseError> {
    let body = raw.trim().trim_start_matches(DECORATION);
    if let Some(rest) = strip_verdict(body, "YES") {
        let rationale = strip_separators(rest);
        if rationale.is_empty() {
            return Err(ParseError::EmptyRationale);
        }
        return Ok(VerificationOutcome {
            verdict: Verdict::Validated,
            entity_name: candidate_name.to_string(),
            rationale: rationale.to_string(),
        });
    }
    if let Some(rest) = strip_verdict(body, "NO") {
        let open = rest.find('@').ok_or(ParseError::MissingCorrection)?;
        let after_open = &rest[open + 1..];
        let close = after_open.find('@').ok_or(ParseError::MissingCorrection)?;
        let entity = normalize_name(&after_open[..close]);
        if entity.is_empty() {
            return Err(ParseError::MissingCorrection);
        }
        let rationale = strip_separators(&after_open[close + 1..]);
        if rationale.is_empty() {
            return Err(ParseError::EmptyRationale);
        }
        return Ok(VerificationOutcome {
            verdict: Verdict::Corrected,
            entity_name: entity,
            rationale: rationale.to_string(),
        });
    }
    Err(ParseError::MissingVerdict)
}

/// Extracts the first three `Q:<question> A:<answer>` pairs.
///
/// Questions missing a trailing `?` get one appended so every QA input reads
/// as a question downstream.
pub fn parse_qa_response(raw: &str) -> Result<[QaPair; 3], ParseError> {
    let mut pairs = Vec::new();
    let mut cursor = raw;
    while let Some(q_pos) = cursor.find("Q:") {
        let after_q = &cursor[q_pos + 2..];
        let Some(a_pos) = after_q.find("A:") else {
            break;
        };
        let question = after_q[..a_pos].trim();
        let after_a = &after_q[a_pos + 2..];
        let end = after_a.find("Q:").unwrap_or(after_a.len());
        let answer = after_a[..end].trim();
        pairs.push((question.to_string(), answer.to_string()));
        cursor = &after_a[end..];
    }
    if pairs.len() < 3 {
        return Err(ParseError::TooFewPairs(pairs.len()));
    }
    pairs.truncate(3);
    for (i, (q, a)) in pairs.iter().enumerate() {
        if q.is_empty() || a.is_empty() || q == "?" {
            return Err(ParseError::EmptyField(i));
        }
        if q.eq_ignore_ascii_case(FORBIDDEN_QUESTION) {
            return Err(ParseError::ForbiddenQuestion(i));
        }
    }
    let mut it = pairs.into_iter().map(|(mut question, answer)| {
        if !question.ends_with('?') {
            question.push('?');
        }
        QaPair { question, answer }
    });
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Counts sentence terminators followed by whitespace or end of text.
pub fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.trim().chars().collect();
    let mut n = 0;
    for (i, c) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            n += 1;
        }
    }
    if n == 0 && !chars.is_empty() {
        1
    } else {
        n
    }
}
