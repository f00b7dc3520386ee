//! Multi-round extraction with a language model.

use super::tuples::{format_tuples, parse_delimited_tuples, TupleRecord};
use crate::llm::{LlmClient, LlmError, LlmRequest};
use crate::prompts::{render, PromptConfig};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GleanOutcome {
    /// Records from every round, in order.
    pub records: Vec<TupleRecord>,
    pub skipped: usize,
    pub extraction_calls: usize,
    pub yes_no_calls: usize,
}

/// Extracts from `chunk`, then up to `max_rounds` times asks whether anything was missed
/// and, on "yes", requests a continuation. An ambiguous answer ends the loop like "no".
/// Issues at most `1 + 2 * max_rounds` calls.
pub fn glean(
    chunk: &str,
    client: &dyn LlmClient,
    prompts: &PromptConfig,
    max_rounds: usize,
    few_shot: bool,
) -> Result<GleanOutcome, LlmError> {
    let examples = if few_shot { prompts.examples.trim() } else { "" };
    let mut out = GleanOutcome::default();
    let first = client.complete(&LlmRequest::complete(render(
        &prompts.extract,
        &[("chunk", chunk), ("examples", examples)],
    )))?;
    out.extraction_calls += 1;
    absorb(&mut out, &first);
    for _ in 0..max_rounds {
        let previous = format_tuples(&out.records);
        let check = render(&prompts.glean_check, &[("chunk", chunk), ("previous", &previous)]);
        out.yes_no_calls += 1;
        match client.yes_no(&check) {
            Ok(true) => {}
            Ok(false) | Err(LlmError::AmbiguousReply(_)) => break,
            Err(e) => return Err(e),
        }
        let more = client.complete(&LlmRequest::complete(render(
            &prompts.glean_continue,
            &[("chunk", chunk), ("examples", examples), ("previous", &previous)],
        )))?;
        out.extraction_calls += 1;
        absorb(&mut out, &more);
    }
    Ok(out)
}

fn absorb(out: &mut GleanOutcome, reply: &str) {
    let (records, skipped) = parse_delimited_tuples(reply);
    out.records.extend(records);
    out.skipped += skipped;
}
