//! Merging rule and model candidates, with optional model verification.

use std::collections::{BTreeMap, BTreeSet};

use super::candidate::{CandidateKey, ExtractionCandidate, Origin, Payload};
use crate::graph::{ChunkId, DESCRIPTION_SEPARATOR};
use crate::llm::{LlmClient, LlmError};
use crate::prompts::{render, PromptConfig};

/// Rule-only candidates below this confidence are checked with the model when available.
pub const VERIFY_BELOW: f64 = 0.5;

fn noisy_or(confidences: impl IntoIterator<Item = f64>) -> f64 {
    1.0 - confidences.into_iter().fold(1.0, |acc, c| acc * (1.0 - c))
}

fn push_description(target: &mut String, extra: &str) {
    let extra = extra.trim();
    if extra.is_empty() || target.split(DESCRIPTION_SEPARATOR).any(|d| d == extra) {
        return;
    }
    if !target.is_empty() {
        target.push_str(DESCRIPTION_SEPARATOR);
    }
    target.push_str(extra);
}

struct Group {
    first: ExtractionCandidate,
    per_origin: BTreeMap<Origin, f64>,
    chunk_ids: BTreeSet<ChunkId>,
    description: String,
    weight: Option<f64>,
    temporal: Option<String>,
}

/// Merges candidates sharing an entity key or a `(src, dst, relation_type)` key.
///
/// Within one origin the highest confidence wins; across origins confidences combine as
/// `1 - prod(1 - c)` and the origin becomes [`Origin::Merged`]. Chunk sets are unioned,
/// distinct descriptions concatenated in input order. Output is sorted by key.
pub fn merge_candidates(rule_cands: &[ExtractionCandidate], llm_cands: &[ExtractionCandidate]) -> Vec<ExtractionCandidate> {
    let mut groups: BTreeMap<CandidateKey, Group> = BTreeMap::new();
    for cand in rule_cands.iter().chain(llm_cands) {
        let (description, weight, temporal) = match &cand.payload {
            Payload::Entity(e) => (e.description.as_str(), None, None),
            Payload::Relation(r) => (r.description.as_str(), r.weight, r.temporal.clone()),
        };
        let group = groups.entry(cand.key()).or_insert_with(|| Group {
            first: cand.clone(),
            per_origin: BTreeMap::new(),
            chunk_ids: BTreeSet::new(),
            description: String::new(),
            weight: None,
            temporal: None,
        });
        let slot = group.per_origin.entry(cand.origin).or_insert(0.0);
        *slot = slot.max(cand.confidence);
        group.chunk_ids.extend(cand.chunk_ids.iter().cloned());
        push_description(&mut group.description, description);
        group.weight = match (group.weight, weight) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        if group.temporal.is_none() {
            group.temporal = temporal;
        }
    }
    groups
        .into_values()
        .map(|g| {
            let origin = if g.per_origin.len() == 1 {
                *g.per_origin.keys().next().expect("non-empty group")
            } else {
                Origin::Merged
            };
            let mut payload = g.first.payload;
            match &mut payload {
                Payload::Entity(e) => e.description = g.description,
                Payload::Relation(r) => {
                    r.description = g.description;
                    r.weight = g.weight;
                    r.temporal = g.temporal;
                }
            }
            ExtractionCandidate {
                payload,
                confidence: noisy_or(g.per_origin.values().copied()).clamp(0.0, 1.0),
                origin,
                chunk_ids: g.chunk_ids,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyStats {
    pub asked: usize,
    pub dropped: usize,
}

/// Asks the model about each rule-only entity candidate with confidence below
/// [`VERIFY_BELOW`] and drops those answered "no". Relations left without an endpoint
/// are dropped too. Ambiguous answers keep the candidate.
pub fn verify_candidates(
    candidates: Vec<ExtractionCandidate>,
    client: &dyn LlmClient,
    prompts: &PromptConfig,
    chunk_text: &dyn Fn(&ChunkId) -> Option<String>,
) -> Result<(Vec<ExtractionCandidate>, VerifyStats), LlmError> {
    let mut stats = VerifyStats::default();
    let mut vetoed = BTreeSet::new();
    for cand in &candidates {
        let Some(entity) = cand.as_entity() else { continue };
        if cand.origin != Origin::Rules || cand.confidence >= VERIFY_BELOW {
            continue;
        }
        let Some(text) = cand.chunk_ids.iter().next().and_then(chunk_text) else {
            continue;
        };
        let prompt = render(
            &prompts.verify_entity,
            &[("chunk", &text), ("entity", &entity.surface), ("type", &entity.key.entity_type)],
        );
        stats.asked += 1;
        match client.yes_no(&prompt) {
            Ok(false) => {
                vetoed.insert(entity.key.clone());
            }
            Ok(true) | Err(LlmError::AmbiguousReply(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let kept: Vec<ExtractionCandidate> = candidates
        .into_iter()
        .filter(|c| match &c.payload {
            Payload::Entity(e) => !vetoed.contains(&e.key),
            Payload::Relation(r) => !vetoed.contains(&r.src) && !vetoed.contains(&r.dst),
        })
        .collect();
    stats.dropped = vetoed.len();
    Ok((kept, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::candidate::{EntityKey, RelationPayload};
    use crate::llm::{MockLlm, MockRule};

    fn chunk(n: &str) -> ChunkId {
        ChunkId::new(n)
    }

    #[test]
    fn cross_origin_merge_uses_noisy_or() {
        let r = ExtractionCandidate::entity("OpenAI", "org", "", 0.8, Origin::Rules, &chunk("c1"));
        let l = ExtractionCandidate::entity("openai", "org", "AI lab", 0.7, Origin::Llm, &chunk("c2"));
        let merged = merge_candidates(&[r], &[l]);
        assert_eq!(merged.len(), 1);
        assert!((merged[0].confidence - 0.94).abs() < 1e-12);
        assert_eq!(merged[0].origin, Origin::Merged);
        assert_eq!(merged[0].chunk_ids.len(), 2);
        assert_eq!(merged[0].as_entity().unwrap().description, "AI lab");
    }

    #[test]
    fn same_origin_keeps_max() {
        let a = ExtractionCandidate::entity("X", "t", "", 0.3, Origin::Rules, &chunk("c1"));
        let b = ExtractionCandidate::entity("x", "t", "", 0.8, Origin::Rules, &chunk("c1"));
        let merged = merge_candidates(&[a, b], &[]);
        assert_eq!(merged[0].confidence, 0.8);
        assert_eq!(merged[0].origin, Origin::Rules);
    }

    #[test]
    fn disjoint_sets_concatenate() {
        let a = ExtractionCandidate::entity("A", "t", "", 0.8, Origin::Rules, &chunk("c1"));
        let b = ExtractionCandidate::entity("B", "t", "", 0.7, Origin::Llm, &chunk("c1"));
        assert_eq!(merge_candidates(&[a], &[b]).len(), 2);
    }

    #[test]
    fn relations_merge_on_endpoints_and_type() {
        let rel = |w: f64, origin| ExtractionCandidate {
            payload: Payload::Relation(RelationPayload {
                src: EntityKey::new("A", "p"),
                dst: EntityKey::new("B", "o"),
                relation_type: "works_at".into(),
                description: String::new(),
                weight: None,
                temporal: None,
            }),
            confidence: w,
            origin,
            chunk_ids: [chunk("c1")].into_iter().collect(),
        };
        let merged = merge_candidates(&[rel(0.8, Origin::Rules)], &[rel(0.7, Origin::Llm)]);
        assert_eq!(merged.len(), 1);
        assert!((merged[0].confidence - 0.94).abs() < 1e-12);
    }

    #[test]
    fn low_confidence_rule_candidate_can_be_vetoed() {
        let weak = ExtractionCandidate::entity("Thing", "named_entity", "", 0.3, Origin::Rules, &chunk("c1"));
        let strong = ExtractionCandidate::entity("Alice", "person", "", 0.8, Origin::Rules, &chunk("c1"));
        let mock = MockLlm::with_rules(vec![MockRule::new("\"Thing\"", "no")], "yes");
        let lookup = |_: &ChunkId| Some("Thing and Alice.".to_string());
        let (kept, stats) =
            verify_candidates(vec![weak, strong], &mock, &PromptConfig::default(), &lookup).unwrap();
        assert_eq!(stats, VerifyStats { asked: 1, dropped: 1 });
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].as_entity().unwrap().surface, "Alice");
    }
}
