use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use fnv::FnvHashSet;

use super::{ChunkId, EntityId, Pkg, FORMAT_VERSION};
use crate::metapath::{MetaPathTemplate, Posting};
use crate::par::*;
use crate::text::{normalize_name, normalize_type};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationRule {
    UnsupportedVersion,
    EmptyChunk,
    InvalidSpan,
    IdMismatch,
    UngroundedEntity,
    DanglingChunk,
    DanglingEntity,
    UnnormalizedKey,
    BadWeight,
    UngroundedRelation,
    EmbeddingDim,
    InvalidPosting,
    AdjacencyMismatch,
}

impl fmt::Display for ViolationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub record_id: String,
    pub rule: ViolationRule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.record_id, self.rule, self.detail)
    }
}

struct Report(Vec<Violation>);

impl Report {
    fn add(&mut self, record_id: impl fmt::Display, rule: ViolationRule, detail: impl Into<String>) {
        self.0.push(Violation {
            record_id: record_id.to_string(),
            rule,
            detail: detail.into(),
        });
    }
}

impl Pkg {
    /// Checks every structural invariant. Returns an empty list iff the graph is sound.
    pub fn validate(&self) -> Vec<Violation> {
        let mut r = Report(Vec::new());
        let dim = self.header.embed_dim;
        if self.header.version != FORMAT_VERSION {
            r.add("header", ViolationRule::UnsupportedVersion, format!("version {}", self.header.version));
        }

        for chunk in self.chunks.values() {
            if chunk.text.trim().is_empty() {
                r.add(&chunk.id, ViolationRule::EmptyChunk, "blank text");
            }
            let len = chunk.text.chars().count();
            if chunk.span.is_empty() || chunk.span.len() != len {
                r.add(
                    &chunk.id,
                    ViolationRule::InvalidSpan,
                    format!("span {:?} vs {len} chars", (chunk.span.start, chunk.span.end)),
                );
            }
            let expected = ChunkId::derive(&chunk.doc_id, chunk.span.start, chunk.span.end, &chunk.text);
            if expected != chunk.id {
                r.add(&chunk.id, ViolationRule::IdMismatch, format!("content hashes to {expected}"));
            }
            if let Some(v) = &chunk.embedding {
                if v.dim() != dim {
                    r.add(&chunk.id, ViolationRule::EmbeddingDim, format!("{} != {dim}", v.dim()));
                }
            }
        }

        for entity in self.entities.values() {
            if entity.source_chunk_ids.is_empty() {
                r.add(&entity.id, ViolationRule::UngroundedEntity, "no source chunks");
            }
            for c in &entity.source_chunk_ids {
                if !self.chunks.contains_key(c) {
                    r.add(&entity.id, ViolationRule::DanglingChunk, format!("unknown chunk {c}"));
                }
            }
            if entity.normalized_name != normalize_name(&entity.name)
                || entity.entity_type != normalize_type(&entity.entity_type)
            {
                r.add(&entity.id, ViolationRule::UnnormalizedKey, "name or type not in normal form");
            }
            let expected = EntityId::derive(&entity.normalized_name, &entity.entity_type);
            if expected != entity.id {
                r.add(&entity.id, ViolationRule::IdMismatch, format!("key hashes to {expected}"));
            }
            if let Some(v) = &entity.embedding {
                if v.dim() != dim {
                    r.add(&entity.id, ViolationRule::EmbeddingDim, format!("{} != {dim}", v.dim()));
                }
            }
        }

        // Edge ids are not re-derived: relation types may be relabeled in place.
        for edge in self.edges.values() {
            for end in [&edge.src, &edge.dst] {
                if !self.entities.contains_key(end) {
                    r.add(&edge.id, ViolationRule::DanglingEntity, format!("unknown entity {end}"));
                }
            }
            if !(0.0..=1.0).contains(&edge.weight) {
                r.add(&edge.id, ViolationRule::BadWeight, format!("weight {}", edge.weight));
            }
            if edge.provenance_chunk_ids.is_empty() {
                r.add(&edge.id, ViolationRule::UngroundedRelation, "no provenance chunks");
            }
            for c in &edge.provenance_chunk_ids {
                if !self.chunks.contains_key(c) {
                    r.add(&edge.id, ViolationRule::DanglingChunk, format!("unknown chunk {c}"));
                }
            }
        }

        if self.adjacency != Self::derive_adjacency(&self.entities, &self.edges) {
            r.add("adjacency", ViolationRule::AdjacencyMismatch, "adjacency differs from edge set");
        }

        self.validate_postings(&mut r);
        r.0
    }

    fn validate_postings(&self, r: &mut Report) {
        let n = self.metapaths.max_len();
        let mut adjacent: FnvHashSet<(&EntityId, &EntityId)> = FnvHashSet::default();
        for e in self.edges.values() {
            adjacent.insert((&e.src, &e.dst));
            adjacent.insert((&e.dst, &e.src));
        }
        let nodes: Vec<_> = self.metapaths.postings().iter().collect();
        let found: Vec<Vec<Violation>> = maybe_par_iter!(nodes)
            .map(|(node, per_node)| {
                let mut r = Report(Vec::new());
                self.validate_node_postings(node, per_node, n, &adjacent, &mut r);
                r.0
            })
            .collect();
        r.0.extend(found.into_iter().flatten());
    }

    fn validate_node_postings(
        &self,
        node: &EntityId,
        per_node: &BTreeMap<String, Posting>,
        n: usize,
        adjacent: &FnvHashSet<(&EntityId, &EntityId)>,
        r: &mut Report,
    ) {
        let Some(start) = self.entities.get(node) else {
            r.add(node, ViolationRule::DanglingEntity, "posting for unknown entity");
            return;
        };
        for (label, posting) in per_node {
            let template = MetaPathTemplate::parse(label);
            let record = format!("{node}/{label}");
            if template.node_types.len() < 2 || template.edge_count() >= n {
                r.add(&record, ViolationRule::InvalidPosting, format!("template length outside 1..{n} edges"));
                continue;
            }
            if template.node_types[0] != start.entity_type {
                r.add(&record, ViolationRule::InvalidPosting, "start type mismatch");
            }
            if posting.instances.windows(2).any(|w| w[0] >= w[1]) {
                r.add(&record, ViolationRule::InvalidPosting, "instances not strictly sorted");
            }
            for inst in &posting.instances {
                if let Some(problem) = self.instance_problem(node, &template, inst, adjacent) {
                    r.add(&record, ViolationRule::InvalidPosting, problem);
                }
            }
        }
    }

    fn instance_problem(
        &self,
        start: &EntityId,
        template: &MetaPathTemplate,
        inst: &[EntityId],
        adjacent: &FnvHashSet<(&EntityId, &EntityId)>,
    ) -> Option<String> {
        if inst.len() != template.node_types.len() || inst.first() != Some(start) {
            return Some("instance shape does not match template".into());
        }
        let distinct: BTreeSet<&EntityId> = inst.iter().collect();
        if distinct.len() != inst.len() {
            return Some("instance repeats a node".into());
        }
        for (id, want) in inst.iter().zip(&template.node_types) {
            match self.entities.get(id) {
                None => return Some(format!("unknown entity {id}")),
                Some(e) if &e.entity_type != want => return Some(format!("{id} is not a {want}")),
                Some(_) => {}
            }
        }
        for pair in inst.windows(2) {
            if !adjacent.contains(&(&pair[0], &pair[1])) {
                return Some(format!("{} and {} are not adjacent", pair[0], pair[1]));
            }
        }
        None
    }
}
