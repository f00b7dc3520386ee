//! Co-occurrence relations scored by pointwise mutual information.

use std::collections::{BTreeMap, BTreeSet};

use super::candidate::{EntityKey, ExtractionCandidate, Origin, Payload, RelationPayload};
use crate::graph::ChunkId;

pub const COOC_CONFIDENCE: f64 = 0.6;
pub const COOC_RELATION: &str = "co_occurs_with";

/// One co-occurrence window: the entities mentioned in it and the chunks covering it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoocUnit {
    pub entities: BTreeSet<EntityKey>,
    pub chunk_ids: BTreeSet<ChunkId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub count: usize,
    pub count_a: usize,
    pub count_b: usize,
    /// `ln(count_ab * N / (count_a * count_b))` over `N` windows.
    pub pmi: f64,
}

/// Statistics for every unordered pair (smaller key first) seen together at least once.
pub fn cooc_statistics(units: &[CoocUnit]) -> BTreeMap<(EntityKey, EntityKey), PairStats> {
    let total = units.len() as f64;
    let mut single: BTreeMap<&EntityKey, usize> = BTreeMap::new();
    let mut pairs: BTreeMap<(&EntityKey, &EntityKey), usize> = BTreeMap::new();
    for unit in units {
        let entities: Vec<&EntityKey> = unit.entities.iter().collect();
        for (i, a) in entities.iter().enumerate() {
            *single.entry(a).or_default() += 1;
            for b in &entities[i + 1..] {
                *pairs.entry((a, b)).or_default() += 1;
            }
        }
    }
    pairs
        .into_iter()
        .map(|((a, b), count)| {
            let (ca, cb) = (single[a], single[b]);
            let pmi = (count as f64 * total / (ca as f64 * cb as f64)).ln();
            (
                (a.clone(), b.clone()),
                PairStats {
                    count,
                    count_a: ca,
                    count_b: cb,
                    pmi,
                },
            )
        })
        .collect()
}

/// Emits `co_occurs_with` candidates for pairs with `count >= min_count` and
/// `pmi >= min_pmi`; weight `1 - exp(-count)`, provenance = chunks of the shared windows.
pub fn extract_cooc_relations(units: &[CoocUnit], min_count: usize, min_pmi: f64) -> Vec<ExtractionCandidate> {
    let stats = cooc_statistics(units);
    let mut provenance: BTreeMap<(&EntityKey, &EntityKey), BTreeSet<ChunkId>> = BTreeMap::new();
    for ((a, b), s) in &stats {
        if s.count >= min_count && s.pmi >= min_pmi {
            provenance.insert((a, b), BTreeSet::new());
        }
    }
    if provenance.is_empty() {
        return Vec::new();
    }
    for unit in units {
        let entities: Vec<&EntityKey> = unit.entities.iter().collect();
        for (i, a) in entities.iter().enumerate() {
            for b in &entities[i + 1..] {
                if let Some(chunks) = provenance.get_mut(&(*a, *b)) {
                    chunks.extend(unit.chunk_ids.iter().cloned());
                }
            }
        }
    }
    provenance
        .into_iter()
        .filter(|(_, chunks)| !chunks.is_empty())
        .map(|((a, b), chunk_ids)| {
            let s = &stats[&(a.clone(), b.clone())];
            ExtractionCandidate {
                payload: Payload::Relation(RelationPayload {
                    src: a.clone(),
                    dst: b.clone(),
                    relation_type: COOC_RELATION.to_string(),
                    description: format!("co-occur in {} windows (pmi {:.3})", s.count, s.pmi),
                    weight: Some((1.0 - (-(s.count as f64)).exp()).clamp(0.0, 1.0)),
                    temporal: None,
                }),
                confidence: COOC_CONFIDENCE,
                origin: Origin::Rules,
                chunk_ids,
            }
        })
        .collect()
}
