use std::collections::BTreeSet;
use std::fmt;

use crate::graph::{ChunkId, EntityId};
use crate::text::{normalize_name, normalize_type};

pub const LLM_CONFIDENCE: f64 = 0.7;

/// Entity upsert key: normalized name and normalized type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityKey {
    pub name: String,
    pub entity_type: String,
}

impl EntityKey {
    pub fn new(name: &str, entity_type: &str) -> Self {
        Self {
            name: normalize_name(name),
            entity_type: normalize_type(entity_type),
        }
    }

    pub fn id(&self) -> EntityId {
        EntityId::derive(&self.name, &self.entity_type)
    }
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, self.entity_type)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Rules,
    Llm,
    Merged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityPayload {
    pub key: EntityKey,
    /// Surface form as first seen.
    pub surface: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationPayload {
    pub src: EntityKey,
    pub dst: EntityKey,
    pub relation_type: String,
    pub description: String,
    /// Edge weight when it differs from the confidence.
    pub weight: Option<f64>,
    pub temporal: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Entity(EntityPayload),
    Relation(RelationPayload),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum CandidateKey {
    Entity(EntityKey),
    Relation(EntityKey, EntityKey, String),
}

/// One extracted fact awaiting merge, grounded in the chunks it was found in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionCandidate {
    pub payload: Payload,
    pub confidence: f64,
    pub origin: Origin,
    pub chunk_ids: BTreeSet<ChunkId>,
}

impl ExtractionCandidate {
    pub fn entity(
        name: &str,
        entity_type: &str,
        description: &str,
        confidence: f64,
        origin: Origin,
        chunk: &ChunkId,
    ) -> Self {
        Self {
            payload: Payload::Entity(EntityPayload {
                key: EntityKey::new(name, entity_type),
                surface: name.split_whitespace().collect::<Vec<_>>().join(" "),
                description: description.trim().to_string(),
            }),
            confidence,
            origin,
            chunk_ids: [chunk.clone()].into_iter().collect(),
        }
    }

    pub fn key(&self) -> CandidateKey {
        match &self.payload {
            Payload::Entity(e) => CandidateKey::Entity(e.key.clone()),
            Payload::Relation(r) => CandidateKey::Relation(r.src.clone(), r.dst.clone(), normalize_type(&r.relation_type)),
        }
    }

    pub fn as_entity(&self) -> Option<&EntityPayload> {
        match &self.payload {
            Payload::Entity(e) => Some(e),
            Payload::Relation(_) => None,
        }
    }

    pub fn as_relation(&self) -> Option<&RelationPayload> {
        match &self.payload {
            Payload::Relation(r) => Some(r),
            Payload::Entity(_) => None,
        }
    }
}
