//! LLM-driven verification/correction of candidate entities, rationale and
//! QA generation.

pub mod parse;
pub mod prompts;
pub mod provider;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EntityId, EntityVocabulary};
use crate::matching::CandidateAssignment;
pub use parse::{
    parse_qa_response, parse_verification_response, sentence_count, ParseError, QaPair, Verdict,
    VerificationOutcome,
};
pub use prompts::{render_qa_prompt, render_qa_prompt_with_proxy, render_verification_prompt};
pub use provider::{
    HttpProvider, LlmProvider, ProviderError, ProviderRequest, ProviderResponse, ScriptedProvider,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Verification,
    Qa,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Verification => "verification",
            Stage::Qa => "qa",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("record {image_id} rejected at {stage}: {reason}")]
    RecordRejected {
        image_id: String,
        stage: Stage,
        reason: ParseError,
        raw_response: String,
    },
    #[error("provider failed for {image_id} after {attempts} attempts: {source}")]
    Provider {
        image_id: String,
        attempts: u32,
        source: ProviderError,
    },
    #[error("candidate entity id {0} is not in the vocabulary")]
    UnknownCandidate(EntityId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefineOptions {
    /// Extra attempts per stage after the first failure.
    pub retries: u32,
    /// Send the image reference along with the prompt. Off for text-only models.
    pub send_image: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            retries: 2,
            send_image: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedRecord {
    pub image_id: String,
    pub original_caption: String,
    #[serde(default)]
    pub image_ref: String,
    pub candidate_entity_id: EntityId,
    pub candidate_entity: String,
    #[serde(flatten)]
    pub outcome: VerificationOutcome,
    pub qa_pairs: [QaPair; 3],
}

impl RefinedRecord {
    pub fn entity(&self) -> &str {
        &self.outcome.entity_name
    }

    pub fn is_corrected(&self) -> bool {
        self.outcome.verdict == Verdict::Corrected
    }
}

/// Calls the provider with retries, parsing each reply. Transport failures
/// and parse failures share the retry budget; the last failure is reported.
fn call_and_parse<P, T, F>(
    provider: &P,
    request: &ProviderRequest,
    image_id: &str,
    stage: Stage,
    retries: u32,
    parse: F,
) -> Result<T, RefineError>
where
    P: LlmProvider + ?Sized,
    F: Fn(&str) -> Result<T, ParseError>,
{
    let attempts = retries + 1;
    let mut last: Option<RefineError> = None;
    for _ in 0..attempts {
        match provider.complete(request) {
            Ok(resp) => match parse(&resp.text) {
                Ok(v) => return Ok(v),
                Err(reason) => {
                    last = Some(RefineError::RecordRejected {
                        image_id: image_id.to_string(),
                        stage,
                        reason,
                        raw_response: resp.text,
                    })
                }
            },
            Err(source) => {
                last = Some(RefineError::Provider {
                    image_id: image_id.to_string(),
                    attempts,
                    source,
                })
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Verifies (or corrects) one candidate assignment and generates its
/// rationale and three QA pairs.
///
/// Corrected entity names are kept even when they are not vocabulary
/// members; vocabulary constraints apply only at decoding time.
pub fn refine_record<P>(
    provider: &P,
    assignment: &CandidateAssignment,
    kb: &EntityVocabulary,
    options: &RefineOptions,
    caption_proxy: Option<&str>,
) -> Result<RefinedRecord, RefineError>
where
    P: LlmProvider + ?Sized,
{
    let candidate = kb
        .get(assignment.candidate_entity_id)
        .ok_or(RefineError::UnknownCandidate(
            assignment.candidate_entity_id,
        ))?;
    let image_ref = (options.send_image && !assignment.image_ref.is_empty())
        .then(|| assignment.image_ref.clone());

    let prompt = render_verification_prompt(
        &candidate.canonical_name,
        &candidate.summary,
        &assignment.caption,
        caption_proxy,
    );
    let request = ProviderRequest::new(prompt, image_ref.clone());
    let outcome = call_and_parse(
        provider,
        &request,
        &assignment.image_id,
        Stage::Verification,
        options.retries,
        |raw| parse_verification_response(raw, &candidate.canonical_name),
    )?;
    if sentence_count(&outcome.rationale) > 2 {
        log::warn!(
            "{}: rationale exceeds two sentences, kept as-is",
            assignment.image_id
        );
    }

    let prompt =
        render_qa_prompt_with_proxy(&outcome.entity_name, &outcome.rationale, caption_proxy);
    let request = ProviderRequest::new(prompt, image_ref);
    let qa_pairs = call_and_parse(
        provider,
        &request,
        &assignment.image_id,
        Stage::Qa,
        options.retries,
        parse_qa_response,
    )?;

    Ok(RefinedRecord {
        image_id: assignment.image_id.clone(),
        original_caption: assignment.caption.clone(),
        image_ref: assignment.image_ref.clone(),
        candidate_entity_id: candidate.id,
        candidate_entity: candidate.canonical_name.clone(),
        outcome,
        qa_pairs,
    })
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no records to compute a rate over")]
pub struct EmptyInput;

/// Fraction of records whose candidate entity was corrected.
pub fn correction_rate(records: &[RefinedRecord]) -> Result<f64, EmptyInput> {
    if records.is_empty() {
        return Err(EmptyInput);
    }
    let corrected = records.iter().filter(|r| r.is_corrected()).count();
    Ok(corrected as f64 / records.len() as f64)
}
