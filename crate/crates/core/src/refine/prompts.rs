//! Verification/correction and QA-generation prompt templates.
//!
//! The wording is part of the method's contract and is reproduced verbatim,
//! including its typos and the stray double quote in the correction sentence.
//! Golden-file tests in `tests/golden/` pin the exact bytes.

/// Line prepended when the refining model is text-only and receives a
/// generated description instead of the image.
pub const CAPTION_PROXY_PREFIX: &str = "Here are the visual attributes of the image: ";

/// The question the QA prompt forbids.
pub const FORBIDDEN_QUESTION: &str = "What is the main object in the image?";

/// Renders the entity verification/correction and rationale prompt.
pub fn render_verification_prompt(
    candidate_name: &str,
    summary: &str,
    caption: &str,
    caption_proxy: Option<&str>,
) -> String {
    let c = candidate_name;
    let mut out = String::with_capacity(1400 + 4 * c.len() + summary.len() + caption.len());
    push_proxy(&mut out, caption_proxy);
    out.push_str("You are working on an entity recognition task.\n");
    out.push_str(&format!("Is this an image of {c}?\n"));
    out.push_str("Your answer must be either 'YES' or 'NO'.\n");
    out.push_str(&format!("Here is the definition of {c}: {summary}.\n"));
    out.push_str(&format!(
        "If your answer is 'YES', you must use the definition of {c} to answer whether this is an image of a {c}.\n"
    ));
    out.push_str(&format!(
        "If your answer is 'NO', you must use the caption of the image {caption} to describe the main object in the image with the most specific English Wikipedia article title, where the response follows the format '@response@'. \" You must then explain your answer by describing the visual attributes of the image.\n"
    ));
    out.push_str(&format!(
        "If you answer is 'YES', your explanation MUST be based on the definition of {c}. If you answer is 'NO', your explanation MUST ONLY be based on the visual cues of the image, and it should NOT contain {c}.\n"
    ));
    out.push_str("Your explanation must be concise.\n");
    out.push_str("Your explanation MUST NOT exceed two sentences.\n");
    out
}

/// Renders the question/answer generation prompt.
pub fn render_qa_prompt(entity_name: &str, rationale: &str) -> String {
    render_qa_prompt_with_proxy(entity_name, rationale, None)
}

/// QA prompt with the optional caption-proxy line, for text-only models.
pub fn render_qa_prompt_with_proxy(
    entity_name: &str,
    rationale: &str,
    caption_proxy: Option<&str>,
) -> String {
    let mut out = String::with_capacity(900 + entity_name.len() + rationale.len());
    push_proxy(&mut out, caption_proxy);
    out.push_str("You are working on a visual question answering task.\n");
    out.push_str(&format!("This is an image of {entity_name}.\n"));
    out.push_str(&format!("Your rationale is the following: {rationale}.\n"));
    out.push_str(
        "Your task is to generate 3 question/answer pairs describing the visual attributes of this image.\n",
    );
    out.push_str(
        "The questions MUST be diverse and cover several entities of the image, including the main object in the image or image itself. The answers MUST be specific English Wikipedia article titles. The answers MUST be based on the visual content of the image and the provided rationale.\n",
    );
    out.push_str(&format!(
        "The format for the question/answer pairs is Q:<question> A:<answer>. The questions MUST NOT contain {FORBIDDEN_QUESTION}.\n"
    ));
    out
}

fn push_proxy(out: &mut String, caption_proxy: Option<&str>) {
    if let Some(proxy) = caption_proxy {
        out.push_str(CAPTION_PROXY_PREFIX);
        out.push_str(proxy);
        out.push('\n');
    }
}
