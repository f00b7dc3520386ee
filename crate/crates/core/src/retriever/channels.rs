//! The regex, vector and meta-path retrieval channels. Each yields chunk hits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::Serialize;

use crate::embedding::{cosine, select_top};
use crate::graph::{ChunkId, EdgeId, EntityId, Pkg};
use crate::metapath::{instances, MetaPathConfig, MetaPathInstance, TemplateScorer};
use crate::par::*;

use super::query::QueryBundle;
use super::RetrieveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Regex,
    Vector,
    Metapath,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Regex, Channel::Vector, Channel::Metapath];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Regex => "regex",
            Channel::Vector => "vector",
            Channel::Metapath => "metapath",
        }
    }

    /// Parses a comma-separated list such as `vector,metapath`; duplicates collapse and
    /// the result is in canonical order.
    pub fn parse_list(list: &str) -> Result<Vec<Channel>, RetrieveError> {
        let set: BTreeSet<Channel> = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        if set.is_empty() {
            return Err(RetrieveError::NoChannels);
        }
        Ok(set.into_iter().collect())
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = RetrieveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "regex" => Ok(Channel::Regex),
            "vector" => Ok(Channel::Vector),
            "metapath" => Ok(Channel::Metapath),
            other => Err(RetrieveError::UnknownChannel(other.to_string())),
        }
    }
}

/// Graph elements that justify a hit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Support {
    pub entities: BTreeSet<EntityId>,
    pub edges: BTreeSet<EdgeId>,
    pub paths: BTreeSet<MetaPathInstance>,
}

impl Support {
    pub fn absorb(&mut self, other: &Support) {
        self.entities.extend(other.entities.iter().cloned());
        self.edges.extend(other.edges.iter().cloned());
        self.paths.extend(other.paths.iter().cloned());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelHit {
    pub chunk_id: ChunkId,
    pub score: f64,
    pub support: Support,
}

/// Hits of one channel: one per chunk, sorted by score descending then chunk id.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResult {
    pub channel: Channel,
    pub hits: Vec<ChannelHit>,
    /// Why the result is empty or partial, e.g. `no_query_entities`.
    pub flags: Vec<String>,
}

impl ChannelResult {
    /// Drops non-finite scores, merges duplicate chunks (max score, union of support) and
    /// sorts.
    pub fn new(channel: Channel, hits: impl IntoIterator<Item = ChannelHit>) -> Self {
        let mut merged: BTreeMap<ChunkId, ChannelHit> = BTreeMap::new();
        for hit in hits.into_iter().filter(|h| h.score.is_finite()) {
            match merged.get_mut(&hit.chunk_id) {
                Some(existing) => {
                    existing.score = existing.score.max(hit.score);
                    existing.support.absorb(&hit.support);
                }
                None => {
                    merged.insert(hit.chunk_id.clone(), hit);
                }
            }
        }
        let mut hits: Vec<ChannelHit> = merged.into_values().collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
        Self {
            channel,
            hits,
            flags: Vec::new(),
        }
    }

    pub fn flagged(channel: Channel, flag: &str) -> Self {
        Self {
            channel,
            hits: Vec::new(),
            flags: vec![flag.to_string()],
        }
    }

    pub fn truncate(&mut self, depth: usize) {
        self.hits.truncate(depth);
    }
}

/// Case-insensitive whole-word patterns for every matched query entity surface.
pub fn regex_patterns(bundle: &QueryBundle) -> Vec<String> {
    bundle
        .query_entities
        .iter()
        .map(|q| format!(r"(?i)\b{}\b", regex::escape(&q.surface)))
        .collect()
}

/// Matches `patterns` against entity names and chunk texts. A chunk scores 1 per pattern
/// found in its text; an entity whose name matches adds 2 per pattern to every chunk of
/// its 1-hop neighborhood.
pub fn regex_retrieve(pkg: &Pkg, patterns: &[String]) -> Result<ChannelResult, RetrieveError> {
    if patterns.is_empty() {
        return Ok(ChannelResult::flagged(Channel::Regex, "no_patterns"));
    }
    let compiled: Vec<Regex> = patterns
        .iter()
        .map(|p| {
            Regex::new(p).map_err(|e| RetrieveError::BadPattern {
                pattern: p.clone(),
                message: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    let count = |text: &str| compiled.iter().filter(|r| r.is_match(text)).count();

    let entities: Vec<&EntityId> = pkg.entities().keys().collect();
    let entity_hits: Vec<(&EntityId, usize)> = maybe_par_iter!(entities)
        .filter_map(|id| {
            let n = count(&pkg.entities()[*id].name);
            (n > 0).then_some((*id, n))
        })
        .collect();
    let chunks: Vec<&ChunkId> = pkg.chunks().keys().collect();
    let chunk_hits: Vec<(&ChunkId, usize)> = maybe_par_iter!(chunks)
        .filter_map(|id| {
            let n = count(&pkg.chunks()[*id].text);
            (n > 0).then_some((*id, n))
        })
        .collect();

    let mut scores: BTreeMap<ChunkId, (f64, Support)> = BTreeMap::new();
    for (chunk, n) in chunk_hits {
        scores.entry(chunk.clone()).or_default().0 += n as f64;
    }
    for (entity, n) in entity_hits {
        let sub = pkg.neighborhood(entity.as_str(), 1).expect("entity exists");
        let members: BTreeSet<&EntityId> = sub.entities.iter().collect();
        for chunk in &sub.chunks {
            let slot = scores.entry(chunk.clone()).or_default();
            slot.0 += 2.0 * n as f64;
            slot.1.entities.insert(entity.clone());
            let linked: BTreeSet<&EntityId> = pkg.chunk_entities(chunk.as_str()).filter(|e| members.contains(e)).collect();
            slot.1.entities.extend(linked.iter().map(|e| (*e).clone()));
            for edge_id in pkg.incident_edges(entity.as_str()) {
                if linked.contains(pkg.edges()[edge_id].other_end(entity)) {
                    slot.1.edges.insert(edge_id.clone());
                }
            }
        }
    }
    Ok(ChannelResult::new(
        Channel::Regex,
        scores.into_iter().map(|(chunk_id, (score, support))| ChannelHit {
            chunk_id,
            score,
            support,
        }),
    ))
}

/// Exact dense search over chunk and entity embeddings. A candidate scores its maximum
/// cosine against the query and hypothetical-answer vectors; an entity passes its score
/// to its source chunks. Returns the best `k` chunks.
pub fn vector_retrieve(pkg: &Pkg, bundle: &QueryBundle, k: usize) -> ChannelResult {
    let queries: Vec<_> = bundle.vectors().collect();
    let best = |v: &crate::embedding::Vector| {
        queries
            .iter()
            .filter_map(|q| cosine(q, v).ok())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let chunks: Vec<_> = pkg.chunks().values().collect();
    let chunk_scores: Vec<(ChunkId, f64)> = maybe_par_iter!(chunks)
        .filter_map(|c| c.embedding.as_ref().map(|v| (c.id.clone(), best(v))))
        .collect();
    let entities: Vec<_> = pkg.entities().values().collect();
    let entity_scores: Vec<(&EntityId, f64)> = maybe_par_iter!(entities)
        .filter_map(|e| e.embedding.as_ref().map(|v| (&e.id, best(v))))
        .collect();

    let mut scores: BTreeMap<ChunkId, (f64, Option<&EntityId>)> =
        chunk_scores.into_iter().map(|(id, s)| (id, (s, None))).collect();
    for (entity, score) in entity_scores {
        for chunk in &pkg.entities()[entity].source_chunk_ids {
            let slot = scores.entry(chunk.clone()).or_insert((f64::NEG_INFINITY, None));
            if score > slot.0 {
                *slot = (score, Some(entity));
            }
        }
    }
    let mut ranked: Vec<(ChunkId, f64)> = scores
        .iter()
        .filter(|(_, (s, _))| s.is_finite())
        .map(|(id, (s, _))| (id.clone(), *s))
        .collect();
    if k == 0 {
        ranked.clear();
    } else {
        select_top(&mut ranked, k);
    }
    ChannelResult::new(
        Channel::Vector,
        ranked.into_iter().map(|(chunk_id, score)| {
            let mut support = Support::default();
            if let Some(entity) = scores[&chunk_id].1 {
                support.entities.insert(entity.clone());
            }
            ChannelHit {
                chunk_id,
                score,
                support,
            }
        }),
    )
}

/// Traverses the best-scoring templates that start at a matched query entity type. Each
/// instance adds `template_score / edge_count` to every chunk grounding one of its nodes
/// or edges.
pub fn metapath_retrieve(
    pkg: &Pkg,
    bundle: &QueryBundle,
    scorer: Option<&TemplateScorer>,
    config: &MetaPathConfig,
) -> ChannelResult {
    let starts: Vec<&EntityId> = bundle.entity_ids().into_iter().collect();
    if starts.is_empty() {
        return ChannelResult::flagged(Channel::Metapath, "no_query_entities");
    }
    let Some(scorer) = scorer.filter(|s| !s.is_empty()) else {
        return ChannelResult::flagged(Channel::Metapath, "no_templates");
    };
    let types = bundle.entity_types(pkg);
    let selected = match scorer.select(&bundle.query_vector, &types, config.selection_top_k, Some(&types)) {
        Ok(s) if !s.is_empty() => s,
        _ => return ChannelResult::flagged(Channel::Metapath, "no_templates"),
    };
    let mut scores: BTreeMap<ChunkId, (f64, Support)> = BTreeMap::new();
    for scored in &selected {
        let first = &scored.template.node_types[0];
        let typed_starts: Vec<EntityId> = starts
            .iter()
            .filter(|id| pkg.entity(id.as_str()).is_some_and(|e| &e.entity_type == first))
            .map(|id| (*id).clone())
            .collect();
        let found = match instances(&typed_starts, &scored.template, pkg.metapaths(), pkg, config) {
            Ok(found) => found,
            Err(e) => {
                log::debug!("template {} skipped: {e}", scored.label);
                continue;
            }
        };
        let share = scored.score / scored.template.edge_count() as f64;
        for instance in found {
            let mut chunks: BTreeSet<&ChunkId> = BTreeSet::new();
            for node in &instance.node_ids {
                chunks.extend(&pkg.entities()[node].source_chunk_ids);
            }
            for edge in &instance.edge_ids {
                chunks.extend(&pkg.edges()[edge].provenance_chunk_ids);
            }
            for chunk in chunks {
                let slot = scores.entry(chunk.clone()).or_default();
                slot.0 += share;
                slot.1.entities.extend(instance.node_ids.iter().cloned());
                slot.1.edges.extend(instance.edge_ids.iter().cloned());
                slot.1.paths.insert(instance.clone());
            }
        }
    }
    let mut result = ChannelResult::new(
        Channel::Metapath,
        scores.into_iter().map(|(chunk_id, (score, support))| ChannelHit {
            chunk_id,
            score,
            support,
        }),
    );
    if result.hits.is_empty() {
        result.flags.push("no_instances".into());
    }
    result
}
