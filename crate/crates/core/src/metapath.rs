//! Meta-path pre-computation, storage, selection and traversal.
//!
//! A meta-path template is a chain of entity types; an instance is a simple path of
//! entities whose types match the chain positionally. Edges are traversed in both
//! directions and their relation types are ignored. Path length counts edges: every
//! instance with `1 <= edges < n` is enumerated from its start node and stored there.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::embedding::{cosine, EmbedError, EmbeddingProvider, Vector};
use crate::graph::{EdgeId, EntityId, Pkg};
use crate::par::*;

pub const DEFAULT_MAX_LEN: usize = 4;
pub const DEFAULT_CAP: usize = 64;

#[derive(Debug, Error)]
pub enum MetaPathError {
    #[error("meta-path index is empty")]
    EmptyIndex,
    #[error("unknown meta-path template {0:?}")]
    UnknownTemplate(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPathConfig {
    /// Paths with fewer edges than this are pre-stored.
    pub max_len: usize,
    pub per_node_template_cap: usize,
    pub selection_top_k: usize,
    /// DFS expansions allowed per start node before all its postings are flagged truncated.
    pub expansion_budget: usize,
    /// Result cap for traversals that bypass the stored postings.
    pub fallback_result_cap: usize,
    pub cosine_weight: f64,
    pub type_weight: f64,
}

impl Default for MetaPathConfig {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            per_node_template_cap: DEFAULT_CAP,
            selection_top_k: 3,
            expansion_budget: 250_000,
            fallback_result_cap: 10_000,
            cosine_weight: 0.7,
            type_weight: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MetaPathTemplate {
    pub node_types: Vec<String>,
}

impl MetaPathTemplate {
    pub fn new<S: Into<String>>(node_types: impl IntoIterator<Item = S>) -> Self {
        Self {
            node_types: node_types.into_iter().map(Into::into).collect(),
        }
    }

    pub fn parse(label: &str) -> Self {
        Self::new(label.split('-'))
    }

    pub fn label(&self) -> String {
        self.node_types.join("-")
    }

    pub fn edge_count(&self) -> usize {
        self.node_types.len().saturating_sub(1)
    }

    pub fn reversed(&self) -> Self {
        Self {
            node_types: self.node_types.iter().rev().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct MetaPathInstance {
    pub template: String,
    pub node_ids: Vec<EntityId>,
    /// One edge per step: the smallest-id edge joining the two nodes, in either direction.
    pub edge_ids: Vec<EdgeId>,
}

/// Stored instances of one template starting at one node, sorted by node-id sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Posting {
    pub instances: Vec<Vec<EntityId>>,
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemplateInfo {
    pub stored_instances: usize,
    pub postings: usize,
    pub truncated_postings: usize,
}

#[derive(Debug, Clone)]
pub struct MetaPathIndex {
    max_len: usize,
    cap: usize,
    postings: BTreeMap<EntityId, BTreeMap<String, Posting>>,
    catalog: BTreeMap<String, TemplateInfo>,
}

impl PartialEq for MetaPathIndex {
    // The cap is a build parameter, not content.
    fn eq(&self, other: &Self) -> bool {
        self.max_len == other.max_len && self.postings == other.postings
    }
}

impl MetaPathIndex {
    pub fn empty(max_len: usize) -> Self {
        Self {
            max_len,
            cap: DEFAULT_CAP,
            postings: BTreeMap::new(),
            catalog: BTreeMap::new(),
        }
    }

    /// Reassembles an index from stored postings; the catalog is recomputed.
    pub fn from_postings(
        max_len: usize,
        cap: usize,
        postings: BTreeMap<EntityId, BTreeMap<String, Posting>>,
    ) -> Self {
        let mut catalog: BTreeMap<String, TemplateInfo> = BTreeMap::new();
        for per_node in postings.values() {
            for (label, posting) in per_node {
                let info = catalog.entry(label.clone()).or_default();
                info.stored_instances += posting.instances.len();
                info.postings += 1;
                info.truncated_postings += usize::from(posting.truncated);
            }
        }
        Self {
            max_len,
            cap,
            postings,
            catalog,
        }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn is_empty(&self) -> bool {
        self.catalog.is_empty()
    }

    pub fn catalog(&self) -> &BTreeMap<String, TemplateInfo> {
        &self.catalog
    }

    pub fn postings(&self) -> &BTreeMap<EntityId, BTreeMap<String, Posting>> {
        &self.postings
    }

    pub fn node_postings(&self, node: &str) -> Option<&BTreeMap<String, Posting>> {
        self.postings.get(node)
    }

    pub fn posting(&self, node: &str, label: &str) -> Option<&Posting> {
        self.postings.get(node).and_then(|m| m.get(label))
    }

    pub fn stored_instance_count(&self) -> usize {
        self.catalog.values().map(|i| i.stored_instances).sum()
    }
}

/// Compact view of the entity graph: dense indices in id order, deduplicated sorted
/// neighbor lists without self-loops.
struct DenseView<'a> {
    ids: Vec<&'a EntityId>,
    types: Vec<u32>,
    type_names: Vec<&'a str>,
    neighbors: Vec<Vec<u32>>,
}

impl<'a> DenseView<'a> {
    fn new(pkg: &'a Pkg) -> Self {
        let ids: Vec<&EntityId> = pkg.entities().keys().collect();
        let index: HashMap<&str, u32> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i as u32)).collect();
        let mut type_ids: BTreeMap<&str, u32> = BTreeMap::new();
        let types: Vec<u32> = pkg
            .entities()
            .values()
            .map(|e| {
                let next = type_ids.len() as u32;
                *type_ids.entry(e.entity_type.as_str()).or_insert(next)
            })
            .collect();
        let mut type_names = vec![""; type_ids.len()];
        for (name, id) in &type_ids {
            type_names[*id as usize] = name;
        }
        let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); ids.len()];
        for edge in pkg.edges().values() {
            if edge.src == edge.dst {
                continue;
            }
            let (a, b) = (index[edge.src.as_str()], index[edge.dst.as_str()]);
            neighbors[a as usize].push(b);
            neighbors[b as usize].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            ids,
            types,
            type_names,
            neighbors,
        }
    }
}

type DensePostings = Vec<(Vec<u32>, Vec<Vec<u32>>, bool)>;

struct StartEnumeration<'v> {
    view: &'v DenseView<'v>,
    max_edges: usize,
    cap: usize,
    budget: usize,
    expansions: usize,
    path: Vec<u32>,
    lists: HashMap<Vec<u32>, (Vec<Vec<u32>>, bool)>,
}

impl StartEnumeration<'_> {
    /// Returns false once the expansion budget is exhausted.
    fn visit(&mut self, u: u32) -> bool {
        let view = self.view;
        for &v in &view.neighbors[u as usize] {
            if self.path.contains(&v) {
                continue;
            }
            self.expansions += 1;
            if self.expansions > self.budget {
                return false;
            }
            self.path.push(v);
            let key: Vec<u32> = self.path.iter().map(|&n| view.types[n as usize]).collect();
            let entry = self.lists.entry(key).or_default();
            if entry.0.len() < self.cap {
                entry.0.push(self.path.clone());
            } else {
                entry.1 = true;
            }
            if self.path.len() - 1 < self.max_edges && !self.visit(v) {
                return false;
            }
            self.path.pop();
        }
        true
    }
}

fn enumerate_from(view: &DenseView<'_>, start: u32, config: &MetaPathConfig) -> DensePostings {
    let max_edges = config.max_len.saturating_sub(1);
    if max_edges == 0 {
        return Vec::new();
    }
    let mut run = StartEnumeration {
        view,
        max_edges,
        cap: config.per_node_template_cap.max(1),
        budget: config.expansion_budget,
        expansions: 0,
        path: vec![start],
        lists: HashMap::new(),
    };
    let finished = run.visit(start);
    if !finished {
        log::debug!("meta-path expansion budget exhausted at {}", view.ids[start as usize]);
    }
    run.lists
        .into_iter()
        .map(|(key, (instances, truncated))| (key, instances, truncated || !finished))
        .collect()
}

/// Enumerates every simple path with `1 <= edges < config.max_len` from every entity.
///
/// Neighbors are visited in ascending id order, so each per-template list is produced
/// in lexicographic order and a truncated list is a prefix of the full one.
pub fn enumerate_metapaths(pkg: &Pkg, config: &MetaPathConfig) -> MetaPathIndex {
    let view = DenseView::new(pkg);
    let starts: Vec<u32> = (0..view.ids.len() as u32).collect();
    let per_start: Vec<(u32, DensePostings)> = maybe_into_par_iter!(starts)
        .map(|s| (s, enumerate_from(&view, s, config)))
        .collect();
    let mut postings: BTreeMap<EntityId, BTreeMap<String, Posting>> = BTreeMap::new();
    for (start, lists) in per_start {
        if lists.is_empty() {
            continue;
        }
        let node = postings.entry(view.ids[start as usize].clone()).or_default();
        for (key, instances, truncated) in lists {
            let label = key
                .iter()
                .map(|&t| view.type_names[t as usize])
                .collect::<Vec<_>>()
                .join("-");
            let instances = instances
                .into_iter()
                .map(|p| p.into_iter().map(|n| view.ids[n as usize].clone()).collect())
                .collect();
            node.insert(label, Posting { instances, truncated });
        }
    }
    let mut index = MetaPathIndex::from_postings(config.max_len, config.per_node_template_cap, postings);
    index.cap = config.per_node_template_cap;
    index
}

/// The smallest-id edge joining `a` and `b` in either direction.
fn connecting_edge(pkg: &Pkg, a: &EntityId, b: &EntityId) -> Option<EdgeId> {
    pkg.incident_edges(a.as_str())
        .into_iter()
        .find(|e| pkg.edge(e.as_str()).is_some_and(|edge| edge.other_end(a) == b && edge.src != edge.dst))
        .cloned()
}

fn materialize(pkg: &Pkg, label: &str, node_ids: Vec<EntityId>) -> Option<MetaPathInstance> {
    let edge_ids = node_ids
        .windows(2)
        .map(|w| connecting_edge(pkg, &w[0], &w[1]))
        .collect::<Option<Vec<_>>>()?;
    Some(MetaPathInstance {
        template: label.to_string(),
        node_ids,
        edge_ids,
    })
}

/// Typed DFS from `start`, in lexicographic order, stopping after `limit` results.
fn typed_paths(pkg: &Pkg, start: &EntityId, template: &MetaPathTemplate, limit: usize) -> Vec<Vec<EntityId>> {
    fn walk<'a>(
        pkg: &'a Pkg,
        template: &MetaPathTemplate,
        path: &mut Vec<&'a EntityId>,
        out: &mut Vec<Vec<EntityId>>,
        limit: usize,
    ) {
        if path.len() == template.node_types.len() {
            out.push(path.iter().map(|id| (*id).clone()).collect());
            return;
        }
        let want = &template.node_types[path.len()];
        let last = path[path.len() - 1];
        for next in pkg.neighbors(last.as_str()) {
            if out.len() >= limit {
                return;
            }
            if path.contains(&next) || pkg.entity(next.as_str()).is_none_or(|e| &e.entity_type != want) {
                continue;
            }
            path.push(next);
            walk(pkg, template, path, out, limit);
            path.pop();
        }
    }
    let mut out = Vec::new();
    match pkg.entities().get_key_value(start) {
        Some((id, e)) if template.node_types.first() == Some(&e.entity_type) && template.node_types.len() >= 2 => {
            walk(pkg, template, &mut vec![id], &mut out, limit);
        }
        _ => {}
    }
    out
}

/// Instances of `template` starting at any of `starts`, deduplicated and sorted.
///
/// Templates shorter than the index limit are served from postings, with a traversal
/// fallback for truncated postings; longer templates are traversed directly. Either
/// traversal stops after `config.fallback_result_cap` results in total.
pub fn instances(
    starts: &[EntityId],
    template: &MetaPathTemplate,
    index: &MetaPathIndex,
    pkg: &Pkg,
    config: &MetaPathConfig,
) -> Result<Vec<MetaPathInstance>, MetaPathError> {
    let label = template.label();
    let stored = template.edge_count() < index.max_len();
    if template.node_types.len() < 2 || (stored && !index.catalog.contains_key(&label)) {
        return Err(MetaPathError::UnknownTemplate(label));
    }
    if !stored {
        let known: BTreeSet<&str> = pkg.entities().values().map(|e| e.entity_type.as_str()).collect();
        if let Some(missing) = template.node_types.iter().find(|t| !known.contains(t.as_str())) {
            return Err(MetaPathError::UnknownTemplate(format!("{label} (no {missing} entities)")));
        }
    }
    let mut budget = config.fallback_result_cap;
    let mut found: BTreeSet<Vec<EntityId>> = BTreeSet::new();
    let unique_starts: BTreeSet<&EntityId> = starts.iter().collect();
    for start in unique_starts {
        if stored {
            match index.posting(start.as_str(), &label) {
                Some(posting) if !posting.truncated => {
                    found.extend(posting.instances.iter().cloned());
                    continue;
                }
                Some(_) => {}
                // A node whose enumeration ran out of budget may lack whole templates.
                None if index
                    .node_postings(start.as_str())
                    .is_some_and(|m| m.values().any(|p| p.truncated)) => {}
                None => continue,
            }
        }
        let paths = typed_paths(pkg, start, template, budget);
        budget -= paths.len().min(budget);
        found.extend(paths);
    }
    Ok(found
        .into_iter()
        .filter_map(|ids| materialize(pkg, &label, ids))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTemplate {
    pub template: MetaPathTemplate,
    pub label: String,
    pub score: f64,
}

/// Scores catalog templates against a query; template label embeddings are computed once.
pub struct TemplateScorer {
    templates: Vec<(String, MetaPathTemplate, Vector)>,
    cosine_weight: f64,
    type_weight: f64,
}

impl TemplateScorer {
    pub fn new(
        index: &MetaPathIndex,
        provider: &dyn EmbeddingProvider,
        config: &MetaPathConfig,
    ) -> Result<Self, MetaPathError> {
        let labels: Vec<String> = index.catalog().keys().cloned().collect();
        let texts: Vec<String> = labels.iter().map(|l| l.replace(['-', '_'], " ")).collect();
        let vectors = provider.embed_batch(&texts)?;
        Ok(Self {
            templates: labels
                .into_iter()
                .zip(vectors)
                .map(|(label, v)| (label.clone(), MetaPathTemplate::parse(&label), v))
                .collect(),
            cosine_weight: config.cosine_weight,
            type_weight: config.type_weight,
        })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn score(&self, query_vector: &Vector, query_types: &BTreeSet<String>, label: &str) -> Option<f64> {
        let (_, template, vector) = self.templates.iter().find(|(l, _, _)| l == label)?;
        Some(self.score_one(query_vector, query_types, template, vector))
    }

    fn score_one(
        &self,
        query_vector: &Vector,
        query_types: &BTreeSet<String>,
        template: &MetaPathTemplate,
        vector: &Vector,
    ) -> f64 {
        let sim = cosine(query_vector, vector).unwrap_or(0.0);
        let matching = template.node_types.iter().filter(|t| query_types.contains(*t)).count();
        let fraction = matching as f64 / template.node_types.len().max(1) as f64;
        self.cosine_weight * sim + self.type_weight * fraction
    }

    /// Top `k` templates by `w_cos * cosine(query, label) + w_type * type-match fraction`,
    /// ties by label. With `start_types`, only templates starting at one of them compete.
    pub fn select(
        &self,
        query_vector: &Vector,
        query_types: &BTreeSet<String>,
        k: usize,
        start_types: Option<&BTreeSet<String>>,
    ) -> Result<Vec<ScoredTemplate>, MetaPathError> {
        if self.templates.is_empty() {
            return Err(MetaPathError::EmptyIndex);
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<ScoredTemplate> = self
            .templates
            .iter()
            .filter(|(_, t, _)| start_types.is_none_or(|s| s.contains(&t.node_types[0])))
            .map(|(label, template, vector)| ScoredTemplate {
                template: template.clone(),
                label: label.clone(),
                score: self.score_one(query_vector, query_types, template, vector),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.label.cmp(&b.label)));
        scored.truncate(k);
        Ok(scored)
    }
}

/// One-shot form of [`TemplateScorer::select`].
pub fn select_templates(
    query_vector: &Vector,
    query_types: &BTreeSet<String>,
    index: &MetaPathIndex,
    provider: &dyn EmbeddingProvider,
    config: &MetaPathConfig,
    k: usize,
) -> Result<Vec<ScoredTemplate>, MetaPathError> {
    if index.is_empty() {
        return Err(MetaPathError::EmptyIndex);
    }
    TemplateScorer::new(index, provider, config)?.select(query_vector, query_types, k, None)
}
