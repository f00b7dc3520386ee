//! Context items handed to a language model, and their assembly under a size budget.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::graph::{ChunkId, EdgeId, EntityId, Pkg};
use crate::metapath::MetaPathInstance;

use super::channels::Channel;
use super::fusion::FusedHit;
use super::RetrieveError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub entities: Vec<EntityId>,
    pub edges: Vec<EdgeId>,
    pub paths: Vec<MetaPathInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextItem {
    pub chunk_id: ChunkId,
    pub doc_id: String,
    pub text: String,
    pub fused_score: f64,
    pub channel_scores: BTreeMap<Channel, f64>,
    pub channel_ranks: BTreeMap<Channel, usize>,
    pub provenance: Provenance,
}

impl ContextItem {
    /// JSON object with keys in ascending order at every level.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("context items serialize")
    }

    pub(crate) fn from_hit(hit: FusedHit, pkg: &Pkg) -> Option<Self> {
        let chunk = pkg.chunk(hit.chunk_id.as_str())?;
        Some(Self {
            chunk_id: hit.chunk_id,
            doc_id: chunk.doc_id.clone(),
            text: chunk.text.clone(),
            fused_score: hit.fused_score,
            channel_scores: hit.channel_scores,
            channel_ranks: hit.channel_ranks,
            provenance: Provenance {
                entities: hit.support.entities.into_iter().collect(),
                edges: hit.support.edges.into_iter().collect(),
                paths: hit.support.paths.into_iter().collect(),
            },
        })
    }
}

/// Items as a JSON array.
pub fn items_to_json(items: &[ContextItem]) -> Value {
    Value::Array(items.iter().map(ContextItem::to_json).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextBlock {
    pub chunk_id: ChunkId,
    pub header: String,
    pub text: String,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextPackage {
    pub blocks: Vec<ContextBlock>,
    /// Chunk text chars used; headers are not counted.
    pub used_chars: usize,
}

impl ContextPackage {
    /// Blocks as `header\ntext`, separated by blank lines.
    pub fn render(&self) -> String {
        self.blocks
            .iter()
            .map(|b| format!("{}\n{}", b.header, b.text))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn block_header(item: &ContextItem) -> String {
    format!("[chunk {} | doc {} | score {:.6}]", item.chunk_id, item.doc_id, item.fused_score)
}

/// The longest prefix of `text` of at most `budget` chars that ends at a whitespace
/// boundary, trailing whitespace removed.
fn cut_at_whitespace(text: &str, budget: usize) -> &str {
    let mut last_boundary = 0;
    for (count, (byte, c)) in text.char_indices().enumerate() {
        if count == budget {
            if c.is_whitespace() {
                last_boundary = byte;
            }
            return text[..last_boundary].trim_end();
        }
        if c.is_whitespace() {
            last_boundary = byte;
        }
    }
    text.trim_end()
}

/// Takes items in order while their text fits into `budget` chars. The first item that
/// does not fit is cut at a whitespace boundary and closes the package.
pub fn assemble_context(items: &[ContextItem], budget: usize) -> Result<ContextPackage, RetrieveError> {
    if budget == 0 {
        return Err(RetrieveError::InvalidConfig("context budget must be positive".into()));
    }
    let mut package = ContextPackage::default();
    for item in items {
        let remaining = budget - package.used_chars;
        let len = item.text.chars().count();
        if len <= remaining {
            package.used_chars += len;
            package.blocks.push(ContextBlock {
                chunk_id: item.chunk_id.clone(),
                header: block_header(item),
                text: item.text.clone(),
                truncated: false,
            });
            continue;
        }
        let cut = cut_at_whitespace(&item.text, remaining);
        if !cut.is_empty() {
            package.used_chars += cut.chars().count();
            package.blocks.push(ContextBlock {
                chunk_id: item.chunk_id.clone(),
                header: block_header(item),
                text: cut.to_string(),
                truncated: true,
            });
        }
        break;
    }
    Ok(package)
}
