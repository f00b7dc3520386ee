//! Corpus to graph: segmentation, rule and model extraction, merging, insertion,
//! embedding and meta-path enumeration.

mod candidate;
mod cooc;
mod corpus;
mod glean;
mod merge;
mod rules;
mod segment;
mod tuples;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use candidate::{
    CandidateKey, EntityKey, EntityPayload, ExtractionCandidate, Origin, Payload, RelationPayload, LLM_CONFIDENCE,
};
pub use cooc::{cooc_statistics, extract_cooc_relations, CoocUnit, PairStats, COOC_CONFIDENCE, COOC_RELATION};
pub use corpus::{Corpus, CorpusError, Document};
pub use glean::{glean, GleanOutcome};
pub use merge::{merge_candidates, verify_candidates, VerifyStats, VERIFY_BELOW};
pub use rules::{
    default_rules, extract_rule_entities, extract_rule_relations, EntityMention, ExtractionRule, RelationMention,
    RuleError, RuleKind, RuleSet, RULE_CONFIDENCE,
};
pub use segment::{reconstruct, segment, split_sentences, Segment, ABBREVIATIONS};
pub use tuples::{format_tuples, parse_delimited_tuples, TupleRecord, FIELD_SEP, RECORD_SEP};

use crate::embedding::{EmbedError, EmbeddingProvider};
use crate::graph::{ChunkId, GraphError, NewRelation, Pkg, PkgHeader, Span, Violation};
use crate::llm::{LlmClient, LlmError};
use crate::metapath::{enumerate_metapaths, MetaPathConfig};
use crate::par::*;
use crate::prompts::PromptConfig;
use crate::text::{default_stopwords, normalize_name};
use segment::{segment_doc, sentence_spans, CharText};

pub const GENERIC_ENTITY_TYPE: &str = "named_entity";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid builder config: {0}")]
    Config(String),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("document {0:?} is empty")]
    EmptyDocument(String),
    #[error("corpus produced no chunks")]
    NoChunks,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("built graph failed validation: {0:?}")]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone)]
pub struct BuilderConfig {
    pub chunk_target_chars: usize,
    pub chunk_overlap_chars: usize,
    pub stopwords: BTreeSet<String>,
    pub rules: Vec<ExtractionRule>,
    /// Sentences per co-occurrence window.
    pub cooc_window: usize,
    pub cooc_min_count: usize,
    pub cooc_min_pmi: f64,
    pub llm_enabled: bool,
    pub max_glean_rounds: usize,
    /// `None` uses the shipped example set; an empty list disables few-shot prompting.
    pub few_shot_examples: Option<Vec<String>>,
    pub prompts: PromptConfig,
    /// Chunks whose model calls may be in flight at once.
    pub llm_concurrency: usize,
    /// On an unreachable model, keep going with rule extraction only.
    pub llm_fallback_to_rules: bool,
    pub verify_low_confidence: bool,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            chunk_target_chars: 800,
            chunk_overlap_chars: 120,
            stopwords: default_stopwords(),
            rules: default_rules(),
            cooc_window: 1,
            cooc_min_count: 2,
            cooc_min_pmi: 0.0,
            llm_enabled: false,
            max_glean_rounds: 2,
            few_shot_examples: None,
            prompts: PromptConfig::default(),
            llm_concurrency: 1,
            llm_fallback_to_rules: true,
            verify_low_confidence: true,
        }
    }
}

impl BuilderConfig {
    pub fn validate(&self) -> Result<(), BuildError> {
        if self.chunk_target_chars == 0 {
            return Err(BuildError::Config("chunk_target_chars must be positive".into()));
        }
        if self.chunk_overlap_chars >= self.chunk_target_chars {
            return Err(BuildError::Config(format!(
                "chunk overlap {} must be smaller than the target {}",
                self.chunk_overlap_chars, self.chunk_target_chars
            )));
        }
        if self.cooc_window == 0 {
            return Err(BuildError::Config("cooc_window must be at least 1".into()));
        }
        if self.llm_concurrency == 0 {
            return Err(BuildError::Config("llm_concurrency must be at least 1".into()));
        }
        Ok(())
    }

    fn effective_prompts(&self) -> PromptConfig {
        let mut prompts = self.prompts.clone();
        if let Some(examples) = &self.few_shot_examples {
            prompts.examples = examples.join("\n\n");
        }
        prompts
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub documents: usize,
    pub failed_documents: Vec<(String, String)>,
    pub chunks: usize,
    pub entities: usize,
    pub edges: usize,
    pub templates: usize,
    pub metapath_instances: usize,
    pub rule_candidates: usize,
    pub llm_candidates: usize,
    pub cooc_relations: usize,
    pub skipped_tuples: usize,
    pub llm_extraction_calls: usize,
    pub llm_yes_no_calls: usize,
    pub verification: VerifyStats,
    /// Why model extraction stopped early, when it did.
    pub llm_fallback: Option<String>,
    pub dropped_relations: usize,
}

/// One segmented document with its rule extractions.
struct DocExtraction {
    chunks: Vec<(Span, ChunkId, String)>,
    sentences: Vec<Span>,
    entities: Vec<EntityMention>,
    relations: Vec<RelationMention>,
}

impl DocExtraction {
    /// Chunks fully containing `span`, or else the chunks overlapping it.
    fn covering(&self, span: Span) -> BTreeSet<ChunkId> {
        let full: BTreeSet<ChunkId> = self
            .chunks
            .iter()
            .filter(|(s, _, _)| s.start <= span.start && span.end <= s.end)
            .map(|(_, id, _)| id.clone())
            .collect();
        if !full.is_empty() {
            return full;
        }
        self.chunks
            .iter()
            .filter(|(s, _, _)| s.start < span.end && span.start < s.end)
            .map(|(_, id, _)| id.clone())
            .collect()
    }
}

fn extract_document(doc: &Document, config: &BuilderConfig, rules: &RuleSet) -> Result<DocExtraction, BuildError> {
    if doc.text.trim().is_empty() {
        return Err(BuildError::EmptyDocument(doc.doc_id.clone()));
    }
    let text = CharText::new(&doc.text);
    let chunks = segment_doc(&text, config.chunk_target_chars, config.chunk_overlap_chars)
        .into_iter()
        .map(|s| {
            let id = ChunkId::derive(&doc.doc_id, s.span.start, s.span.end, &s.text);
            (s.span, id, s.text)
        })
        .collect();
    Ok(DocExtraction {
        chunks,
        sentences: sentence_spans(&text),
        entities: extract_rule_entities(&doc.text, rules),
        relations: extract_rule_relations(&doc.text, rules),
    })
}

fn rule_candidates(doc: &DocExtraction) -> Vec<ExtractionCandidate> {
    let mut out = Vec::new();
    for m in &doc.entities {
        let chunk_ids = doc.covering(m.span);
        if chunk_ids.is_empty() || normalize_name(&m.name).is_empty() {
            continue;
        }
        let mut cand = ExtractionCandidate::entity(&m.name, &m.entity_type, "", m.confidence, Origin::Rules, &ChunkId::new(""));
        cand.chunk_ids = chunk_ids;
        out.push(cand);
    }
    for r in &doc.relations {
        let chunk_ids = doc.covering(r.span);
        if chunk_ids.is_empty() {
            continue;
        }
        for (name, ty) in [(&r.src, &r.src_type), (&r.dst, &r.dst_type)] {
            let mut cand = ExtractionCandidate::entity(name, ty, "", r.confidence, Origin::Rules, &ChunkId::new(""));
            cand.chunk_ids = chunk_ids.clone();
            out.push(cand);
        }
        out.push(ExtractionCandidate {
            payload: Payload::Relation(RelationPayload {
                src: EntityKey::new(&r.src, &r.src_type),
                dst: EntityKey::new(&r.dst, &r.dst_type),
                relation_type: r.relation_type.clone(),
                description: String::new(),
                weight: None,
                temporal: r.temporal.clone(),
            }),
            confidence: r.confidence,
            origin: Origin::Rules,
            chunk_ids,
        });
    }
    out
}

/// Converts one chunk's model records into candidates grounded to that chunk. Relation
/// endpoints resolve by name against entities known in the chunk; unknown endpoints
/// become generic entities.
fn llm_candidates(records: &[TupleRecord], chunk: &ChunkId, rule_keys: &[EntityKey]) -> Vec<ExtractionCandidate> {
    let mut out = Vec::new();
    let mut known: BTreeMap<String, EntityKey> = BTreeMap::new();
    for r in records {
        if let TupleRecord::Entity {
            name,
            entity_type,
            description,
        } = r
        {
            let cand = ExtractionCandidate::entity(name, entity_type, description, LLM_CONFIDENCE, Origin::Llm, chunk);
            let key = cand.as_entity().expect("entity candidate").key.clone();
            if key.name.is_empty() {
                continue;
            }
            known.entry(key.name.clone()).or_insert(key);
            out.push(cand);
        }
    }
    for key in rule_keys {
        known.entry(key.name.clone()).or_insert_with(|| key.clone());
    }
    for r in records {
        if let TupleRecord::Relation {
            src,
            dst,
            relation_type,
            description,
            temporal,
        } = r
        {
            let mut resolve = |name: &str| -> Option<EntityKey> {
                let normalized = normalize_name(name);
                if normalized.is_empty() {
                    return None;
                }
                if let Some(k) = known.get(&normalized) {
                    return Some(k.clone());
                }
                let cand = ExtractionCandidate::entity(name, GENERIC_ENTITY_TYPE, "", LLM_CONFIDENCE, Origin::Llm, chunk);
                let key = cand.as_entity().expect("entity candidate").key.clone();
                known.insert(normalized, key.clone());
                out.push(cand);
                Some(key)
            };
            let (Some(s), Some(d)) = (resolve(src), resolve(dst)) else {
                continue;
            };
            out.push(ExtractionCandidate {
                payload: Payload::Relation(RelationPayload {
                    src: s,
                    dst: d,
                    relation_type: relation_type.clone(),
                    description: description.clone(),
                    weight: None,
                    temporal: temporal.clone(),
                }),
                confidence: LLM_CONFIDENCE,
                origin: Origin::Llm,
                chunk_ids: [chunk.clone()].into_iter().collect(),
            });
        }
    }
    out
}

/// Maps generic `named_entity` keys to the specific type most often given to the same
/// name elsewhere (ties: alphabetical).
fn refinement_map(candidates: &[ExtractionCandidate]) -> BTreeMap<String, String> {
    let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let keys = candidates.iter().flat_map(|c| match &c.payload {
        Payload::Entity(e) => vec![&e.key],
        Payload::Relation(r) => vec![&r.src, &r.dst],
    });
    for k in keys.filter(|k| k.entity_type != GENERIC_ENTITY_TYPE) {
        *counts.entry(k.name.as_str()).or_default().entry(k.entity_type.as_str()).or_default() += 1;
    }
    counts
        .into_iter()
        .filter_map(|(name, types)| {
            let best = types.iter().max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))?;
            Some((name.to_string(), best.0.to_string()))
        })
        .collect()
}

fn refine_key(key: &mut EntityKey, map: &BTreeMap<String, String>) {
    if key.entity_type == GENERIC_ENTITY_TYPE {
        if let Some(t) = map.get(&key.name) {
            key.entity_type = t.clone();
        }
    }
}

fn refine(candidates: &mut [ExtractionCandidate], map: &BTreeMap<String, String>) {
    for c in candidates {
        match &mut c.payload {
            Payload::Entity(e) => refine_key(&mut e.key, map),
            Payload::Relation(r) => {
                refine_key(&mut r.src, map);
                refine_key(&mut r.dst, map);
            }
        }
    }
}

fn cooc_units(doc: &DocExtraction, window: usize, map: &BTreeMap<String, String>) -> Vec<CoocUnit> {
    let blocks = doc.sentences.len().div_ceil(window);
    let mut units: Vec<CoocUnit> = (0..blocks)
        .map(|b| {
            let first = doc.sentences[b * window];
            let last = doc.sentences[((b + 1) * window).min(doc.sentences.len()) - 1];
            CoocUnit {
                entities: BTreeSet::new(),
                chunk_ids: doc.covering(Span::new(first.start, last.end)),
            }
        })
        .collect();
    let mut add = |sentence: usize, name: &str, ty: &str| {
        let mut key = EntityKey::new(name, ty);
        if key.name.is_empty() {
            return;
        }
        refine_key(&mut key, map);
        if let Some(unit) = units.get_mut(sentence / window) {
            unit.entities.insert(key);
        }
    };
    for m in &doc.entities {
        add(m.sentence, &m.name, &m.entity_type);
    }
    for r in &doc.relations {
        add(r.sentence, &r.src, &r.src_type);
        add(r.sentence, &r.dst, &r.dst_type);
    }
    units
}

struct LlmPhase {
    candidates: Vec<ExtractionCandidate>,
    skipped: usize,
    extraction_calls: usize,
    yes_no_calls: usize,
    fallback: Option<String>,
}

fn run_llm(
    docs: &[DocExtraction],
    rule_cands: &[ExtractionCandidate],
    client: &dyn LlmClient,
    config: &BuilderConfig,
    prompts: &PromptConfig,
) -> Result<LlmPhase, BuildError> {
    let mut keys_by_chunk: BTreeMap<&ChunkId, Vec<EntityKey>> = BTreeMap::new();
    for c in rule_cands {
        if let Some(e) = c.as_entity() {
            for chunk in &c.chunk_ids {
                keys_by_chunk.entry(chunk).or_default().push(e.key.clone());
            }
        }
    }
    let jobs: Vec<(&ChunkId, &str)> = docs
        .iter()
        .flat_map(|d| d.chunks.iter().map(|(_, id, text)| (id, text.as_str())))
        .collect();
    let few_shot = !prompts.examples.trim().is_empty();
    let mut phase = LlmPhase {
        candidates: Vec::new(),
        skipped: 0,
        extraction_calls: 0,
        yes_no_calls: 0,
        fallback: None,
    };
    for batch in jobs.chunks(config.llm_concurrency) {
        let results: Vec<Result<GleanOutcome, LlmError>> = maybe_par_iter!(batch)
            .map(|(_, text)| glean(text, client, prompts, config.max_glean_rounds, few_shot))
            .collect();
        for ((chunk, _), result) in batch.iter().zip(results) {
            match result {
                Ok(outcome) => {
                    phase.skipped += outcome.skipped;
                    phase.extraction_calls += outcome.extraction_calls;
                    phase.yes_no_calls += outcome.yes_no_calls;
                    let known = keys_by_chunk.get(chunk).map(Vec::as_slice).unwrap_or(&[]);
                    phase.candidates.extend(llm_candidates(&outcome.records, chunk, known));
                }
                Err(e @ (LlmError::LlmUnavailable(_) | LlmError::Timeout)) if config.llm_fallback_to_rules => {
                    log::warn!("model extraction stopped, continuing with rules only: {e}");
                    phase.fallback = Some(e.to_string());
                    return Ok(phase);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(phase)
}

/// Builds a graph from `corpus`. Blank documents are reported and skipped; the build
/// fails only when no chunk at all is produced. With model extraction disabled, or with a
/// deterministic client and `llm_concurrency = 1`, the result is a pure function of the
/// inputs.
pub fn build(
    corpus: &Corpus,
    config: &BuilderConfig,
    provider: &dyn EmbeddingProvider,
    mp_config: &MetaPathConfig,
    llm: Option<&dyn LlmClient>,
) -> Result<(Pkg, BuildReport), BuildError> {
    config.validate()?;
    let client = match (config.llm_enabled, llm) {
        (true, None) => return Err(BuildError::Config("model extraction enabled without a client".into())),
        (true, Some(c)) => Some(c),
        (false, _) => None,
    };
    let rules = RuleSet::new(&config.rules)?.with_stopwords(config.stopwords.clone());
    let mut report = BuildReport {
        documents: corpus.documents.len(),
        ..BuildReport::default()
    };

    let extracted: Vec<Result<DocExtraction, BuildError>> = maybe_par_iter!(corpus.documents)
        .map(|d| extract_document(d, config, &rules))
        .collect();
    let mut docs = Vec::new();
    for (doc, result) in corpus.documents.iter().zip(extracted) {
        match result {
            Ok(d) if !d.chunks.is_empty() => docs.push(d),
            Ok(_) => report.failed_documents.push((doc.doc_id.clone(), "no chunks".into())),
            Err(e) => report.failed_documents.push((doc.doc_id.clone(), e.to_string())),
        }
    }
    let mut graph = Pkg::new(PkgHeader::new(provider.id(), provider.dim(), mp_config.max_len));
    for (doc, d) in corpus.documents.iter().filter(|d| !d.text.trim().is_empty()).zip(&docs) {
        for (span, _, text) in &d.chunks {
            graph.add_chunk(&doc.doc_id, *span, text)?;
        }
    }
    if graph.chunks().is_empty() {
        return Err(BuildError::NoChunks);
    }

    let mut rule_cands: Vec<ExtractionCandidate> = docs.iter().flat_map(rule_candidates).collect();
    let prompts = config.effective_prompts();
    let mut llm_cands = Vec::new();
    if let Some(client) = client {
        let phase = run_llm(&docs, &rule_cands, client, config, &prompts)?;
        report.skipped_tuples = phase.skipped;
        report.llm_extraction_calls = phase.extraction_calls;
        report.llm_yes_no_calls = phase.yes_no_calls;
        report.llm_fallback = phase.fallback;
        llm_cands = phase.candidates;
    }

    let all: Vec<ExtractionCandidate> = rule_cands.iter().chain(&llm_cands).cloned().collect();
    let map = refinement_map(&all);
    refine(&mut rule_cands, &map);
    refine(&mut llm_cands, &map);
    let units: Vec<CoocUnit> = docs.iter().flat_map(|d| cooc_units(d, config.cooc_window, &map)).collect();
    let cooc = extract_cooc_relations(&units, config.cooc_min_count, config.cooc_min_pmi);
    report.cooc_relations = cooc.len();
    report.rule_candidates = rule_cands.len() + cooc.len();
    report.llm_candidates = llm_cands.len();
    rule_cands.extend(cooc);

    let mut merged = merge_candidates(&rule_cands, &llm_cands);
    if let (Some(client), true) = (client, config.verify_low_confidence) {
        if report.llm_fallback.is_none() {
            let lookup = |id: &ChunkId| graph.chunk(id.as_str()).map(|c| c.text.clone());
            match verify_candidates(merged.clone(), client, &prompts, &lookup) {
                Ok((kept, stats)) => {
                    report.llm_yes_no_calls += stats.asked;
                    report.verification = stats;
                    merged = kept;
                }
                Err(e @ (LlmError::LlmUnavailable(_) | LlmError::Timeout)) if config.llm_fallback_to_rules => {
                    report.llm_fallback = Some(e.to_string());
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    insert_candidates(&mut graph, &merged, &mut report)?;
    embed_graph(&mut graph, provider)?;
    let index = enumerate_metapaths(&graph, mp_config);
    report.templates = index.catalog().len();
    report.metapath_instances = index.stored_instance_count();
    graph.set_metapath_index(index);

    let violations = graph.validate();
    if !violations.is_empty() {
        return Err(BuildError::Invalid(violations));
    }
    report.chunks = graph.chunks().len();
    report.entities = graph.entities().len();
    report.edges = graph.edges().len();
    Ok((graph, report))
}

fn insert_candidates(graph: &mut Pkg, merged: &[ExtractionCandidate], report: &mut BuildReport) -> Result<(), BuildError> {
    for cand in merged {
        if let Some(e) = cand.as_entity() {
            graph.add_entity(&e.surface, &e.key.entity_type, &e.description, cand.chunk_ids.iter().cloned())?;
        }
    }
    for cand in merged {
        let Some(r) = cand.as_relation() else { continue };
        let (src, dst) = (r.src.id(), r.dst.id());
        if graph.entity(src.as_str()).is_none() || graph.entity(dst.as_str()).is_none() {
            report.dropped_relations += 1;
            continue;
        }
        graph.add_relation(NewRelation {
            src,
            dst,
            relation_type: r.relation_type.clone(),
            description: r.description.clone(),
            weight: r.weight.unwrap_or(cand.confidence).clamp(0.0, 1.0),
            provenance_chunk_ids: cand.chunk_ids.clone(),
            temporal: r.temporal.clone(),
        })?;
    }
    Ok(())
}

/// Embeds every chunk and every entity (`name + " " + description`).
pub fn embed_graph(graph: &mut Pkg, provider: &dyn EmbeddingProvider) -> Result<(), BuildError> {
    let chunk_ids: Vec<ChunkId> = graph.chunks().keys().cloned().collect();
    let texts: Vec<String> = graph.chunks().values().map(|c| c.text.clone()).collect();
    for (id, v) in chunk_ids.iter().zip(provider.embed_batch(&texts)?) {
        graph.set_chunk_embedding(id, v)?;
    }
    let entity_ids: Vec<_> = graph.entities().keys().cloned().collect();
    let texts: Vec<String> = graph.entities().values().map(|e| e.embedding_text()).collect();
    for (id, v) in entity_ids.iter().zip(provider.embed_batch(&texts)?) {
        graph.set_entity_embedding(id, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::llm::{LlmMode, MockLlm, MockRule};

    fn toy() -> Corpus {
        Corpus::new(vec![Document::new(
            "toy.txt",
            "Alice Varga works at Zentrix Labs. Zentrix Labs is based in Quorvale. Alice Varga met Bob Stone in Quorvale.",
        )])
    }

    fn small_chunks() -> BuilderConfig {
        BuilderConfig {
            chunk_target_chars: 40,
            chunk_overlap_chars: 0,
            ..BuilderConfig::default()
        }
    }

    #[test]
    fn toy_corpus_is_grounded() {
        let (g, report) = build(&toy(), &small_chunks(), &HashEmbedder::new(64), &MetaPathConfig::default(), None).unwrap();
        assert!(g.chunks().len() >= 3);
        assert!(g.validate().is_empty());
        for e in g.entities().values() {
            assert!(!e.source_chunk_ids.is_empty());
            assert!(e.source_chunk_ids.iter().all(|c| g.chunk(c.as_str()).is_some()));
            assert!(e.embedding.is_some());
        }
        let names: BTreeSet<(&str, &str)> =
            g.entities().values().map(|e| (e.normalized_name.as_str(), e.entity_type.as_str())).collect();
        assert!(names.contains(&("alice varga", "person")));
        assert!(names.contains(&("zentrix labs", "organization")));
        assert!(names.contains(&("quorvale", "location")));
        assert!(report.templates > 0);
    }

    #[test]
    fn builds_are_byte_identical() {
        let a = build(&toy(), &small_chunks(), &HashEmbedder::new(64), &MetaPathConfig::default(), None).unwrap().0;
        let b = build(&toy(), &small_chunks(), &HashEmbedder::new(64), &MetaPathConfig::default(), None).unwrap().0;
        assert_eq!(a.to_jsonl(), b.to_jsonl());
    }

    #[test]
    fn blank_documents_are_reported_not_fatal() {
        let mut corpus = toy();
        corpus.documents.insert(0, Document::new("blank.txt", "   \n"));
        let (_, report) = build(&corpus, &small_chunks(), &HashEmbedder::new(64), &MetaPathConfig::default(), None).unwrap();
        assert_eq!(report.failed_documents.len(), 1);
        let blank = Corpus::new(vec![Document::new("b", " ")]);
        assert!(matches!(
            build(&blank, &small_chunks(), &HashEmbedder::new(64), &MetaPathConfig::default(), None),
            Err(BuildError::NoChunks)
        ));
    }

    #[test]
    fn model_entities_are_grounded_to_the_prompting_chunk() {
        let mock = MockLlm::with_rules(
            vec![
                MockRule::new("Extract entities", "(\"entity\"<|>Hidden Gem<|>project<|>mentioned implicitly)##(\"relation\"<|>Alice Varga<|>Nowhere Person<|>knows<|>x)"),
                MockRule::new("Were any entities", "no"),
            ],
            "",
        );
        let config = BuilderConfig {
            llm_enabled: true,
            ..small_chunks()
        };
        let (g, report) =
            build(&toy(), &config, &HashEmbedder::new(64), &MetaPathConfig::default(), Some(&mock)).unwrap();
        let n = g.chunks().len();
        assert_eq!(report.llm_extraction_calls, n);
        assert_eq!(mock.call_count(LlmMode::Complete), n);
        assert!(report.llm_extraction_calls + report.llm_yes_no_calls <= n * (1 + 2 * config.max_glean_rounds));
        let gem = g.entities().values().find(|e| e.normalized_name == "hidden gem").unwrap();
        assert_eq!(gem.source_chunk_ids.len(), n);
        assert!(g.entities().values().any(|e| e.normalized_name == "nowhere person" && e.entity_type == GENERIC_ENTITY_TYPE));
        assert!(g.validate().is_empty());
    }

    #[test]
    fn unreachable_model_falls_back_to_rules() {
        struct Down;
        impl LlmClient for Down {
            fn complete(&self, _: &crate::llm::LlmRequest) -> Result<String, LlmError> {
                Err(LlmError::LlmUnavailable("down".into()))
            }
        }
        let config = BuilderConfig {
            llm_enabled: true,
            ..small_chunks()
        };
        let (g, report) = build(&toy(), &config, &HashEmbedder::new(64), &MetaPathConfig::default(), Some(&Down)).unwrap();
        assert!(report.llm_fallback.is_some());
        let rules_only = build(&toy(), &small_chunks(), &HashEmbedder::new(64), &MetaPathConfig::default(), None).unwrap().0;
        assert_eq!(g.to_jsonl(), rules_only.to_jsonl());
        let strict = BuilderConfig {
            llm_fallback_to_rules: false,
            ..config
        };
        assert!(matches!(
            build(&toy(), &strict, &HashEmbedder::new(64), &MetaPathConfig::default(), Some(&Down)),
            Err(BuildError::Llm(_))
        ));
    }

    #[test]
    fn config_is_checked() {
        let bad = BuilderConfig {
            chunk_overlap_chars: 800,
            ..BuilderConfig::default()
        };
        assert!(matches!(bad.validate(), Err(BuildError::Config(_))));
    }

    #[test]
    fn cooc_edges_appear_for_repeated_pairs() {
        let text = "Mara Quill met Tobin Reyes. Mara Quill thanked Tobin Reyes. Lone Wolf slept. Lone Wolf woke.";
        let corpus = Corpus::new(vec![Document::new("d", text)]);
        let (g, report) =
            build(&corpus, &BuilderConfig::default(), &HashEmbedder::new(32), &MetaPathConfig::default(), None).unwrap();
        assert_eq!(report.cooc_relations, 1);
        let edge = g.edges().values().find(|e| e.relation_type == COOC_RELATION).unwrap();
        assert!((edge.weight - (1.0 - (-2.0f64).exp())).abs() < 1e-12);
    }
}
