//! Weighted reciprocal-rank fusion and the optional model re-rank.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::ChunkId;
use crate::llm::{LlmClient, LlmRequest};
use crate::prompts::{render, PromptConfig};

use super::channels::{Channel, ChannelResult, Support};
use super::RetrieveError;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub rrf_k: usize,
    pub w_regex: f64,
    pub w_vector: f64,
    pub w_metapath: f64,
    pub output_k: usize,
    pub llm_rerank: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            rrf_k: 60,
            w_regex: 1.0,
            w_vector: 1.0,
            w_metapath: 1.2,
            output_k: 10,
            llm_rerank: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.rrf_k < 1 {
            return Err(RetrieveError::InvalidConfig("rrf_k must be at least 1".into()));
        }
        if [self.w_regex, self.w_vector, self.w_metapath].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RetrieveError::InvalidConfig("channel weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn weight(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Regex => self.w_regex,
            Channel::Vector => self.w_vector,
            Channel::Metapath => self.w_metapath,
        }
    }
}

/// One chunk after fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedHit {
    pub chunk_id: ChunkId,
    pub fused_score: f64,
    pub channel_scores: BTreeMap<Channel, f64>,
    /// 1-based rank within each channel that returned the chunk.
    pub channel_ranks: BTreeMap<Channel, usize>,
    pub support: Support,
}

/// `fused(c) = sum over channels of w / (rrf_k + rank)`, with hits ranked by raw score
/// (ties: chunk id). Every fused hit is returned, best first (ties: chunk id); hits whose
/// fused score is not positive are dropped.
pub fn fuse(results: &[ChannelResult], config: &FusionConfig) -> Result<Vec<FusedHit>, RetrieveError> {
    if results.is_empty() {
        return Err(RetrieveError::NoChannels);
    }
    config.validate()?;
    let mut fused: BTreeMap<&ChunkId, FusedHit> = BTreeMap::new();
    for result in results {
        let weight = config.weight(result.channel);
        let mut ranked: Vec<_> = result.hits.iter().filter(|h| h.score.is_finite()).collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
        let mut seen = BTreeSet::new();
        ranked.retain(|h| seen.insert(&h.chunk_id));
        for (i, hit) in ranked.into_iter().enumerate() {
            let rank = i + 1;
            let entry = fused.entry(&hit.chunk_id).or_insert_with(|| FusedHit {
                chunk_id: hit.chunk_id.clone(),
                fused_score: 0.0,
                channel_scores: BTreeMap::new(),
                channel_ranks: BTreeMap::new(),
                support: Support::default(),
            });
            entry.fused_score += weight / (config.rrf_k + rank) as f64;
            entry.channel_scores.insert(result.channel, hit.score);
            entry.channel_ranks.insert(result.channel, rank);
            entry.support.absorb(&hit.support);
        }
    }
    let mut out: Vec<FusedHit> = fused.into_values().filter(|h| h.fused_score > 0.0).collect();
    out.sort_by(|a, b| b.fused_score.total_cmp(&a.fused_score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    Ok(out)
}

/// Reads a re-rank reply: comma-separated 1-based candidate numbers, each at most once,
/// all within `1..=n`. Candidates not mentioned keep their relative order after the
/// mentioned ones. Any malformed entry voids the whole reply.
pub fn parse_permutation(reply: &str, n: usize) -> Option<Vec<usize>> {
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    for part in reply.trim().trim_end_matches('.').split(',') {
        let index: usize = part.trim().trim_start_matches('[').trim_end_matches(']').parse().ok()?;
        if index == 0 || index > n || !seen.insert(index) {
            return None;
        }
        order.push(index - 1);
    }
    order.extend((0..n).filter(|i| !seen.contains(&(i + 1))));
    Some(order)
}

/// Re-orders the first `2 * output_k` hits by the model's permutation; on any failure
/// the fused order stands.
pub fn llm_rerank(
    hits: Vec<FusedHit>,
    query: &str,
    chunk_text: &dyn Fn(&ChunkId) -> String,
    client: &dyn LlmClient,
    prompts: &PromptConfig,
    output_k: usize,
) -> Vec<FusedHit> {
    let window = (2 * output_k).min(hits.len());
    if window < 2 {
        return hits;
    }
    let candidates: String = hits[..window]
        .iter()
        .enumerate()
        .map(|(i, h)| format!("[{}] {}\n", i + 1, chunk_text(&h.chunk_id).trim()))
        .collect();
    let prompt = render(&prompts.rerank, &[("query", query), ("candidates", candidates.trim_end())]);
    let order = match client.complete(&LlmRequest::complete(prompt)) {
        Ok(reply) => parse_permutation(&reply, window),
        Err(e) => {
            log::warn!("re-rank skipped: {e}");
            None
        }
    };
    let Some(order) = order else { return hits };
    let mut slots: Vec<Option<FusedHit>> = hits.into_iter().map(Some).collect();
    let mut out: Vec<FusedHit> = order.iter().filter_map(|&i| slots[i].take()).collect();
    out.extend(slots.into_iter().flatten());
    out
}
