//! Embedded property graph holding text chunks, entities, and relation edges.
//!
//! Text chunks are first-class nodes: every entity links to at least one chunk it was
//! extracted from, and relation edges carry the chunks that evidence them. The graph is
//! built by a single writer and then treated as frozen; readers share it freely.

mod persist;
mod validate;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

pub use crate::ids::{ChunkId, EdgeId, EntityId};
use crate::embedding::Vector;
use crate::metapath::MetaPathIndex;
use crate::text::{normalize_name, normalize_type};
pub use validate::{Violation, ViolationRule};

pub const FORMAT_VERSION: u32 = 1;
pub const DESCRIPTION_SEPARATOR: &str = " | ";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("chunk text is blank")]
    EmptyChunk,
    #[error("invalid span ({start}, {end}) for text of {len} chars")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("entity {0:?} has no source chunks")]
    UngroundedEntity(String),
    #[error("unknown chunk {0}")]
    DanglingChunk(String),
    #[error("unknown entity {0}")]
    DanglingEntity(String),
    #[error("weight {0} outside [0, 1]")]
    BadWeight(f64),
    #[error("relation has no provenance chunks")]
    UngroundedRelation,
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("embedding has dimension {got}, graph expects {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("integrity error: {}", summarize(.0))]
    Integrity(Vec<Violation>),
}

fn summarize(violations: &[Violation]) -> String {
    let mut parts: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
    if violations.len() > 3 {
        parts.push(format!("... {} more", violations.len() - 3));
    }
    parts.join("; ")
}

/// Half-open `[start, end)` offsets, in chars, into the source document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkgHeader {
    pub version: u32,
    pub embed_dim: usize,
    pub embed_provider: String,
    /// Meta-paths with fewer edges than this are pre-stored in the index.
    pub metapath_max_len: usize,
}

impl PkgHeader {
    pub fn new(embed_provider: impl Into<String>, embed_dim: usize, metapath_max_len: usize) -> Self {
        Self {
            version: FORMAT_VERSION,
            embed_dim,
            embed_provider: embed_provider.into(),
            metapath_max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextChunkNode {
    pub id: ChunkId,
    pub doc_id: String,
    pub span: Span,
    pub text: String,
    pub embedding: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityNode {
    pub id: EntityId,
    pub name: String,
    pub normalized_name: String,
    pub entity_type: String,
    pub description: String,
    pub source_chunk_ids: BTreeSet<ChunkId>,
    pub embedding: Option<Vector>,
}

impl EntityNode {
    /// Text embedded for the entity: its name followed by its description.
    pub fn embedding_text(&self) -> String {
        if self.description.trim().is_empty() {
            self.name.clone()
        } else {
            format!("{} {}", self.name, self.description)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationEdge {
    pub id: EdgeId,
    pub src: EntityId,
    pub dst: EntityId,
    pub relation_type: String,
    pub description: String,
    pub weight: f64,
    pub provenance_chunk_ids: BTreeSet<ChunkId>,
    pub temporal: Option<String>,
}

impl RelationEdge {
    /// The endpoint opposite `node`; for self-loops, `node` itself.
    pub fn other_end(&self, node: &EntityId) -> &EntityId {
        if &self.src == node {
            &self.dst
        } else {
            &self.src
        }
    }
}

/// Arguments of [`Pkg::add_relation`].
#[derive(Debug, Clone)]
pub struct NewRelation {
    pub src: EntityId,
    pub dst: EntityId,
    pub relation_type: String,
    pub description: String,
    pub weight: f64,
    pub provenance_chunk_ids: BTreeSet<ChunkId>,
    pub temporal: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    pub outgoing: BTreeSet<EdgeId>,
    pub incoming: BTreeSet<EdgeId>,
}

/// Result of [`Pkg::neighborhood`]; all id lists sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subgraph {
    pub entities: Vec<EntityId>,
    pub edges: Vec<EdgeId>,
    pub chunks: Vec<ChunkId>,
}

/// The pseudo-knowledge graph.
#[derive(Debug, Clone)]
pub struct Pkg {
    header: PkgHeader,
    chunks: BTreeMap<ChunkId, TextChunkNode>,
    entities: BTreeMap<EntityId, EntityNode>,
    edges: BTreeMap<EdgeId, RelationEdge>,
    metapaths: MetaPathIndex,
    // Derived, rebuilt on load.
    adjacency: BTreeMap<EntityId, Adjacency>,
    chunk_links: BTreeMap<ChunkId, BTreeSet<EntityId>>,
}

impl PartialEq for Pkg {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header
            && self.chunks == other.chunks
            && self.entities == other.entities
            && self.edges == other.edges
            && self.metapaths == other.metapaths
    }
}

fn merge_description(existing: &mut String, incoming: &str) {
    let incoming = incoming.trim();
    if incoming.is_empty() || existing.split(DESCRIPTION_SEPARATOR).any(|p| p == incoming) {
        return;
    }
    if existing.is_empty() {
        existing.push_str(incoming);
    } else {
        existing.push_str(DESCRIPTION_SEPARATOR);
        existing.push_str(incoming);
    }
}

impl Pkg {
    pub fn new(header: PkgHeader) -> Self {
        let metapaths = MetaPathIndex::empty(header.metapath_max_len);
        Self {
            header,
            chunks: BTreeMap::new(),
            entities: BTreeMap::new(),
            edges: BTreeMap::new(),
            metapaths,
            adjacency: BTreeMap::new(),
            chunk_links: BTreeMap::new(),
        }
    }

    pub fn header(&self) -> &PkgHeader {
        &self.header
    }

    /// Inserts a chunk; identical `(doc_id, span, text)` returns the existing id.
    pub fn add_chunk(&mut self, doc_id: &str, span: Span, text: &str) -> Result<ChunkId, GraphError> {
        if text.trim().is_empty() {
            return Err(GraphError::EmptyChunk);
        }
        let len = text.chars().count();
        if span.start >= span.end || span.len() != len {
            return Err(GraphError::InvalidSpan {
                start: span.start,
                end: span.end,
                len,
            });
        }
        let id = ChunkId::derive(doc_id, span.start, span.end, text);
        self.chunks.entry(id.clone()).or_insert_with(|| TextChunkNode {
            id: id.clone(),
            doc_id: doc_id.to_string(),
            span,
            text: text.to_string(),
            embedding: None,
        });
        Ok(id)
    }

    /// Upserts an entity keyed on `(normalized name, normalized type)`. Merging appends
    /// new description text and unions source chunks.
    pub fn add_entity<I>(
        &mut self,
        name: &str,
        entity_type: &str,
        description: &str,
        source_chunk_ids: I,
    ) -> Result<EntityId, GraphError>
    where
        I: IntoIterator<Item = ChunkId>,
    {
        let sources: BTreeSet<ChunkId> = source_chunk_ids.into_iter().collect();
        if sources.is_empty() {
            return Err(GraphError::UngroundedEntity(name.to_string()));
        }
        if let Some(missing) = sources.iter().find(|c| !self.chunks.contains_key(*c)) {
            return Err(GraphError::DanglingChunk(missing.to_string()));
        }
        let normalized_name = normalize_name(name);
        if normalized_name.is_empty() {
            return Err(GraphError::UngroundedEntity(name.to_string()));
        }
        let entity_type = normalize_type(entity_type);
        let id = EntityId::derive(&normalized_name, &entity_type);
        for chunk in &sources {
            self.chunk_links.entry(chunk.clone()).or_default().insert(id.clone());
        }
        match self.entities.get_mut(&id) {
            Some(existing) => {
                merge_description(&mut existing.description, description);
                existing.source_chunk_ids.extend(sources);
            }
            None => {
                let mut merged = String::new();
                merge_description(&mut merged, description);
                self.entities.insert(
                    id.clone(),
                    EntityNode {
                        id: id.clone(),
                        name: name.split_whitespace().collect::<Vec<_>>().join(" "),
                        normalized_name,
                        entity_type,
                        description: merged,
                        source_chunk_ids: sources,
                        embedding: None,
                    },
                );
                self.adjacency.entry(id.clone()).or_default();
            }
        }
        Ok(id)
    }

    /// Upserts a relation keyed on `(src, dst, relation_type)`; duplicates keep the max
    /// weight and the union of provenance. Self-loops are allowed.
    pub fn add_relation(&mut self, rel: NewRelation) -> Result<EdgeId, GraphError> {
        for end in [&rel.src, &rel.dst] {
            if !self.entities.contains_key(end) {
                return Err(GraphError::DanglingEntity(end.to_string()));
            }
        }
        if !(0.0..=1.0).contains(&rel.weight) {
            return Err(GraphError::BadWeight(rel.weight));
        }
        if rel.provenance_chunk_ids.is_empty() {
            return Err(GraphError::UngroundedRelation);
        }
        if let Some(missing) = rel.provenance_chunk_ids.iter().find(|c| !self.chunks.contains_key(*c)) {
            return Err(GraphError::DanglingChunk(missing.to_string()));
        }
        let relation_type = normalize_type(&rel.relation_type);
        let id = EdgeId::derive(&rel.src, &rel.dst, &relation_type);
        match self.edges.get_mut(&id) {
            Some(edge) => {
                edge.weight = edge.weight.max(rel.weight);
                edge.provenance_chunk_ids.extend(rel.provenance_chunk_ids);
                merge_description(&mut edge.description, &rel.description);
                if edge.temporal.is_none() {
                    edge.temporal = rel.temporal.filter(|t| !t.trim().is_empty());
                }
            }
            None => {
                let mut description = String::new();
                merge_description(&mut description, &rel.description);
                self.adjacency.entry(rel.src.clone()).or_default().outgoing.insert(id.clone());
                self.adjacency.entry(rel.dst.clone()).or_default().incoming.insert(id.clone());
                self.edges.insert(
                    id.clone(),
                    RelationEdge {
                        id: id.clone(),
                        src: rel.src,
                        dst: rel.dst,
                        relation_type,
                        description,
                        weight: rel.weight,
                        provenance_chunk_ids: rel.provenance_chunk_ids,
                        temporal: rel.temporal.filter(|t| !t.trim().is_empty()),
                    },
                );
            }
        }
        Ok(id)
    }

    pub fn set_chunk_embedding(&mut self, id: &ChunkId, v: Vector) -> Result<(), GraphError> {
        self.check_dim(&v)?;
        let chunk = self
            .chunks
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))?;
        chunk.embedding = Some(v);
        Ok(())
    }

    pub fn set_entity_embedding(&mut self, id: &EntityId, v: Vector) -> Result<(), GraphError> {
        self.check_dim(&v)?;
        let entity = self
            .entities
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))?;
        entity.embedding = Some(v);
        Ok(())
    }

    fn check_dim(&self, v: &Vector) -> Result<(), GraphError> {
        if v.dim() != self.header.embed_dim {
            return Err(GraphError::EmbeddingDim {
                expected: self.header.embed_dim,
                got: v.dim(),
            });
        }
        Ok(())
    }

    /// Rewrites an edge's relation type in place, keeping its id. Meta-path matching
    /// ignores relation types, so this never invalidates the index.
    pub fn relabel_edge(&mut self, id: &EdgeId, relation_type: &str) -> Result<(), GraphError> {
        let edge = self
            .edges
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))?;
        edge.relation_type = normalize_type(relation_type);
        Ok(())
    }

    pub fn set_metapath_index(&mut self, index: MetaPathIndex) {
        self.header.metapath_max_len = index.max_len();
        self.metapaths = index;
    }

    pub fn metapaths(&self) -> &MetaPathIndex {
        &self.metapaths
    }

    pub fn chunks(&self) -> &BTreeMap<ChunkId, TextChunkNode> {
        &self.chunks
    }

    pub fn entities(&self) -> &BTreeMap<EntityId, EntityNode> {
        &self.entities
    }

    pub fn edges(&self) -> &BTreeMap<EdgeId, RelationEdge> {
        &self.edges
    }

    pub fn chunk(&self, id: &str) -> Option<&TextChunkNode> {
        self.chunks.get(id)
    }

    pub fn entity(&self, id: &str) -> Option<&EntityNode> {
        self.entities.get(id)
    }

    pub fn edge(&self, id: &str) -> Option<&RelationEdge> {
        self.edges.get(id)
    }

    pub fn adjacency(&self, id: &str) -> Option<&Adjacency> {
        self.adjacency.get(id)
    }

    /// Entities extracted from a chunk.
    pub fn chunk_entities(&self, id: &str) -> impl Iterator<Item = &EntityId> {
        self.chunk_links.get(id).into_iter().flatten()
    }

    /// Edges touching `id` in either direction, sorted, self-loops once.
    pub fn incident_edges(&self, id: &str) -> Vec<&EdgeId> {
        let Some(adj) = self.adjacency.get(id) else {
            return Vec::new();
        };
        let set: BTreeSet<&EdgeId> = adj.outgoing.iter().chain(&adj.incoming).collect();
        set.into_iter().collect()
    }

    /// Entities one undirected hop away from `id` (excluding `id` itself unless self-looped).
    pub fn neighbors(&self, id: &str) -> BTreeSet<&EntityId> {
        let Some(entity) = self.entities.get(id) else {
            return BTreeSet::new();
        };
        self.incident_edges(id)
            .into_iter()
            .filter_map(|e| self.edges.get(e))
            .map(|e| e.other_end(&entity.id))
            .collect()
    }

    /// Breadth-first expansion over entity-entity edges (either direction) up to `hops`.
    ///
    /// A chunk id seeds the search with the entities extracted from it and is always part
    /// of the result. The returned edges are those with both endpoints inside the set;
    /// the returned chunks are every chunk linked to a returned entity.
    pub fn neighborhood(&self, node_id: &str, hops: usize) -> Result<Subgraph, GraphError> {
        let mut seen: BTreeSet<EntityId> = BTreeSet::new();
        let mut chunks: BTreeSet<ChunkId> = BTreeSet::new();
        let mut queue: VecDeque<(EntityId, usize)> = VecDeque::new();
        if let Some(entity) = self.entities.get(node_id) {
            seen.insert(entity.id.clone());
            queue.push_back((entity.id.clone(), 0));
        } else if let Some(chunk) = self.chunks.get(node_id) {
            chunks.insert(chunk.id.clone());
            for e in self.chunk_entities(node_id) {
                if seen.insert(e.clone()) {
                    queue.push_back((e.clone(), 0));
                }
            }
        } else {
            return Err(GraphError::UnknownNode(node_id.to_string()));
        }
        while let Some((current, depth)) = queue.pop_front() {
            if depth == hops {
                continue;
            }
            for next in self.neighbors(current.as_str()) {
                if seen.insert(next.clone()) {
                    queue.push_back((next.clone(), depth + 1));
                }
            }
        }
        let mut edges = BTreeSet::new();
        for entity in &seen {
            if let Some(node) = self.entities.get(entity) {
                chunks.extend(node.source_chunk_ids.iter().cloned());
            }
            for edge_id in self.incident_edges(entity.as_str()) {
                let edge = &self.edges[edge_id];
                if seen.contains(&edge.src) && seen.contains(&edge.dst) {
                    edges.insert(edge_id.clone());
                }
            }
        }
        Ok(Subgraph {
            entities: seen.into_iter().collect(),
            edges: edges.into_iter().collect(),
            chunks: chunks.into_iter().collect(),
        })
    }

    /// Recomputes adjacency and chunk links from the entity and edge records.
    fn rebuild_derived(&mut self) {
        self.adjacency = Self::derive_adjacency(&self.entities, &self.edges);
        self.chunk_links.clear();
        for entity in self.entities.values() {
            for chunk in &entity.source_chunk_ids {
                self.chunk_links.entry(chunk.clone()).or_default().insert(entity.id.clone());
            }
        }
    }

    fn derive_adjacency(
        entities: &BTreeMap<EntityId, EntityNode>,
        edges: &BTreeMap<EdgeId, RelationEdge>,
    ) -> BTreeMap<EntityId, Adjacency> {
        let mut adjacency: BTreeMap<EntityId, Adjacency> =
            entities.keys().map(|id| (id.clone(), Adjacency::default())).collect();
        for edge in edges.values() {
            adjacency.entry(edge.src.clone()).or_default().outgoing.insert(edge.id.clone());
            adjacency.entry(edge.dst.clone()).or_default().incoming.insert(edge.id.clone());
        }
        adjacency
    }
}
