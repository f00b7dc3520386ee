//! Query-time retrieval over a frozen graph: query analysis, three channels, fusion and
//! context assembly.

mod channels;
mod context;
mod fusion;
mod query;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

pub use channels::{
    metapath_retrieve, regex_patterns, regex_retrieve, vector_retrieve, Channel, ChannelHit, ChannelResult, Support,
};
pub use context::{assemble_context, block_header, items_to_json, ContextBlock, ContextItem, ContextPackage, Provenance};
pub use fusion::{fuse, llm_rerank, parse_permutation, FusedHit, FusionConfig};
pub use query::{analyze_query, hypothetical_answers, relation_hints, NameIndex, QueryBundle, QueryEntity};

use crate::embedding::{check_compatible, EmbedError, EmbeddingProvider};
use crate::graph::{ChunkId, Pkg};
use crate::llm::LlmClient;
use crate::metapath::{MetaPathConfig, MetaPathError, TemplateScorer};
use crate::par::join;
use crate::prompts::PromptConfig;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("pattern {pattern:?} does not compile: {message}")]
    BadPattern { pattern: String, message: String },
    #[error("no retrieval channel selected")]
    NoChannels,
    #[error("unknown channel {0:?} (expected regex, vector or metapath)")]
    UnknownChannel(String),
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    MetaPath(#[from] MetaPathError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverConfig {
    pub fusion: FusionConfig,
    pub metapath: MetaPathConfig,
    /// Hits kept from the vector channel before fusion (at least the requested `k`).
    pub vector_depth: usize,
    pub max_hypothetical_answers: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            fusion: FusionConfig::default(),
            metapath: MetaPathConfig::default(),
            vector_depth: 50,
            max_hypothetical_answers: 2,
        }
    }
}

/// Outcome of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub bundle: QueryBundle,
    pub items: Vec<ContextItem>,
    /// Channel notes such as `no_query_entities`, per channel that raised one.
    pub flags: BTreeMap<Channel, Vec<String>>,
}

/// Fuses channel results into at most `config.output_k` context items, optionally
/// re-ranked by a model.
pub fn fuse_rerank(
    results: &[ChannelResult],
    config: &FusionConfig,
    pkg: &Pkg,
    rerank: Option<(&dyn LlmClient, &PromptConfig, &str)>,
) -> Result<Vec<ContextItem>, RetrieveError> {
    let mut hits = fuse(results, config)?;
    if let (true, Some((client, prompts, query))) = (config.llm_rerank, rerank) {
        let text = |id: &ChunkId| pkg.chunk(id.as_str()).map(|c| c.text.clone()).unwrap_or_default();
        hits = llm_rerank(hits, query, &text, client, prompts, config.output_k);
    }
    hits.truncate(config.output_k);
    Ok(hits.into_iter().filter_map(|h| ContextItem::from_hit(h, pkg)).collect())
}

/// Query engine over one graph; safe to share across threads.
pub struct Retriever {
    pkg: Arc<Pkg>,
    provider: Arc<dyn EmbeddingProvider>,
    config: RetrieverConfig,
    names: NameIndex,
    relation_types: BTreeSet<String>,
    scorer: Option<TemplateScorer>,
    llm: Option<(Arc<dyn LlmClient>, PromptConfig)>,
}

impl Retriever {
    /// Fails when `provider` differs from the one recorded in the graph header.
    pub fn new(
        pkg: Arc<Pkg>,
        provider: Arc<dyn EmbeddingProvider>,
        config: RetrieverConfig,
    ) -> Result<Self, RetrieveError> {
        config.fusion.validate()?;
        check_compatible(&pkg.header().embed_provider, pkg.header().embed_dim, provider.as_ref())?;
        let scorer = if pkg.metapaths().is_empty() {
            None
        } else {
            Some(TemplateScorer::new(pkg.metapaths(), provider.as_ref(), &config.metapath)?)
        };
        Ok(Self {
            names: NameIndex::new(&pkg),
            relation_types: pkg.edges().values().map(|e| e.relation_type.clone()).collect(),
            pkg,
            provider,
            config,
            scorer,
            llm: None,
        })
    }

    /// Enables hypothetical answers and, with `fusion.llm_rerank`, re-ranking.
    pub fn with_llm(mut self, client: Arc<dyn LlmClient>, prompts: PromptConfig) -> Self {
        self.llm = Some((client, prompts));
        self
    }

    pub fn pkg(&self) -> &Pkg {
        &self.pkg
    }

    pub fn config(&self) -> &RetrieverConfig {
        &self.config
    }

    fn llm_parts(&self) -> Option<(&dyn LlmClient, &PromptConfig)> {
        self.llm.as_ref().map(|(c, p)| (c.as_ref(), p))
    }

    pub fn analyze(&self, query: &str) -> Result<QueryBundle, RetrieveError> {
        query::analyze_with(
            query,
            &self.names,
            self.relation_types.iter().map(String::as_str),
            self.provider.as_ref(),
            self.llm_parts(),
            self.config.max_hypothetical_answers,
        )
    }

    /// Runs the requested channels concurrently; results come in canonical channel order.
    pub fn channel_results(
        &self,
        bundle: &QueryBundle,
        channels: &[Channel],
        k: usize,
    ) -> Result<Vec<ChannelResult>, RetrieveError> {
        let wanted: BTreeSet<Channel> = channels.iter().copied().collect();
        if wanted.is_empty() {
            return Err(RetrieveError::NoChannels);
        }
        let pkg = self.pkg.as_ref();
        let (regex, (vector, metapath)) = join(
            || {
                wanted
                    .contains(&Channel::Regex)
                    .then(|| regex_retrieve(pkg, &regex_patterns(bundle)))
                    .transpose()
            },
            || {
                join(
                    || {
                        wanted
                            .contains(&Channel::Vector)
                            .then(|| vector_retrieve(pkg, bundle, self.config.vector_depth.max(k)))
                    },
                    || {
                        wanted
                            .contains(&Channel::Metapath)
                            .then(|| metapath_retrieve(pkg, bundle, self.scorer.as_ref(), &self.config.metapath))
                    },
                )
            },
        );
        let mut by_channel: BTreeMap<Channel, ChannelResult> = BTreeMap::new();
        for result in [regex?, vector, metapath].into_iter().flatten() {
            by_channel.insert(result.channel, result);
        }
        Ok(wanted.into_iter().filter_map(|c| by_channel.remove(&c)).collect())
    }

    /// Analyzes `query`, runs `channels`, fuses, and returns at most `k` items.
    pub fn retrieve(&self, query: &str, channels: &[Channel], k: usize) -> Result<Retrieval, RetrieveError> {
        let bundle = self.analyze(query)?;
        let results = self.channel_results(&bundle, channels, k)?;
        let fusion = FusionConfig {
            output_k: k,
            ..self.config.fusion.clone()
        };
        let rerank = self.llm_parts().map(|(c, p)| (c, p, query));
        let items = fuse_rerank(&results, &fusion, &self.pkg, rerank)?;
        let flags = results
            .iter()
            .filter(|r| !r.flags.is_empty())
            .map(|r| (r.channel, r.flags.clone()))
            .collect();
        Ok(Retrieval { bundle, items, flags })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{build, BuilderConfig, Corpus, Document};
    use crate::embedding::HashEmbedder;
    use crate::graph::{NewRelation, PkgHeader, Span};

    fn corpus() -> Corpus {
        Corpus::new(vec![
            Document::new("a", "Alice Varga works at Zentrix Labs."),
            Document::new("b", "Zentrix Labs is based in Quorvale."),
            Document::new("c", "Bob Stone works at Helix Systems."),
            Document::new("d", "The weather report mentions rain on 2021-03-04."),
        ])
    }

    fn retriever() -> Retriever {
        let embedder = Arc::new(HashEmbedder::new(64));
        let (g, _) = build(&corpus(), &BuilderConfig::default(), embedder.as_ref(), &MetaPathConfig::default(), None).unwrap();
        Retriever::new(Arc::new(g), embedder, RetrieverConfig::default()).unwrap()
    }

    fn chunk_of(r: &Retriever, doc: &str) -> ChunkId {
        r.pkg().chunks().values().find(|c| c.doc_id == doc).unwrap().id.clone()
    }

    #[test]
    fn metapath_channel_reaches_two_hop_chunk() {
        let r = retriever();
        let out = r.retrieve("Which city hosts the employer of Alice Varga?", &[Channel::Metapath], 5).unwrap();
        let ids: Vec<&ChunkId> = out.items.iter().map(|i| &i.chunk_id).collect();
        assert!(ids.contains(&&chunk_of(&r, "b")));
        assert!(!ids.contains(&&chunk_of(&r, "c")));
        for item in &out.items {
            assert!(!item.provenance.paths.is_empty());
            for p in &item.provenance.paths {
                assert!(p.node_ids.iter().all(|n| r.pkg().entity(n.as_str()).is_some()));
                assert!(p.edge_ids.iter().all(|e| r.pkg().edge(e.as_str()).is_some()));
            }
        }
    }

    #[test]
    fn metapath_without_entities_is_flagged() {
        let r = retriever();
        let out = r.retrieve("nothing known here", &[Channel::Metapath], 5).unwrap();
        assert!(out.items.is_empty());
        assert_eq!(out.flags[&Channel::Metapath], vec!["no_query_entities".to_string()]);
    }

    #[test]
    fn regex_date_pattern_and_neighborhood_expansion() {
        let r = retriever();
        let dated = regex_retrieve(r.pkg(), &[r"\d{4}-\d{2}-\d{2}".to_string()]).unwrap();
        assert_eq!(dated.hits.len(), 1);
        assert_eq!(dated.hits[0].chunk_id, chunk_of(&r, "d"));
        let none = regex_retrieve(r.pkg(), &["zzzz".to_string()]).unwrap();
        assert!(none.hits.is_empty());
        assert!(matches!(regex_retrieve(r.pkg(), &["(".to_string()]), Err(RetrieveError::BadPattern { .. })));

        let alice = r.pkg().entities().values().find(|e| e.normalized_name == "alice varga").unwrap();
        let expected = r.pkg().neighborhood(alice.id.as_str(), 1).unwrap().chunks;
        let hits = regex_retrieve(r.pkg(), &[r"(?i)\bAlice Varga\b".to_string()]).unwrap();
        let got: Vec<ChunkId> = {
            let mut v: Vec<ChunkId> = hits.hits.iter().map(|h| h.chunk_id.clone()).collect();
            v.sort();
            v
        };
        assert_eq!(got, expected);
    }

    #[test]
    fn identical_chunk_is_vector_rank_one() {
        let r = retriever();
        let text = &r.pkg().chunk(chunk_of(&r, "c").as_str()).unwrap().text;
        let bundle = r.analyze(text).unwrap();
        let res = vector_retrieve(r.pkg(), &bundle, 3);
        assert_eq!(res.hits[0].chunk_id, chunk_of(&r, "c"));
        assert!((res.hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hypothetical_vectors_max_pool() {
        let r = retriever();
        let mut bundle = r.analyze("unrelated words entirely").unwrap();
        let base = vector_retrieve(r.pkg(), &bundle, 10);
        let target = chunk_of(&r, "d");
        let text = r.pkg().chunk(target.as_str()).unwrap().text.clone();
        bundle.hypothetical_answers.push((text.clone(), r.provider.embed(&text).unwrap()));
        let pooled = vector_retrieve(r.pkg(), &bundle, 10);
        let score = |res: &ChannelResult| res.hits.iter().find(|h| h.chunk_id == target).map(|h| h.score);
        assert!((score(&pooled).unwrap() - 1.0).abs() < 1e-12);
        assert!(score(&base).unwrap_or(f64::NEG_INFINITY) < 1.0);
    }

    #[test]
    fn full_retrieval_is_deterministic_and_sorted() {
        let r = retriever();
        let a = r.retrieve("Where is Zentrix Labs located?", &Channel::ALL, 3).unwrap();
        let b = r.retrieve("Where is Zentrix Labs located?", &Channel::ALL, 3).unwrap();
        assert_eq!(a.items, b.items);
        assert!(a.items.len() <= 3);
        assert!(a.items.windows(2).all(|w| w[0].fused_score >= w[1].fused_score));
        assert_eq!(a.bundle.relation_hints, vec!["located_in".to_string()]);
    }

    #[test]
    fn two_instances_add_up() {
        let mut g = Pkg::new(PkgHeader::new("hash-v1", 16, 3));
        let shared = g.add_chunk("d", Span::new(0, 6), "shared").unwrap();
        let other = g.add_chunk("d", Span::new(6, 11), "other").unwrap();
        let a = g.add_entity("A", "x", "", [other.clone()]).unwrap();
        let b = g.add_entity("B", "y", "", [shared.clone()]).unwrap();
        let c = g.add_entity("C", "y", "", [shared.clone()]).unwrap();
        for dst in [&b, &c] {
            g.add_relation(NewRelation {
                src: a.clone(),
                dst: dst.clone(),
                relation_type: "r".into(),
                description: String::new(),
                weight: 1.0,
                provenance_chunk_ids: [other.clone()].into_iter().collect(),
                temporal: None,
            })
            .unwrap();
        }
        let embedder = Arc::new(HashEmbedder::new(16));
        crate::builder::embed_graph(&mut g, embedder.as_ref()).unwrap();
        let index = crate::metapath::enumerate_metapaths(&g, &MetaPathConfig::default());
        g.set_metapath_index(index);
        let r = Retriever::new(Arc::new(g), embedder, RetrieverConfig::default()).unwrap();
        let bundle = r.analyze("about A").unwrap();
        let res = metapath_retrieve(r.pkg(), &bundle, r.scorer.as_ref(), &r.config.metapath);
        let scorer = r.scorer.as_ref().unwrap();
        let types = bundle.entity_types(r.pkg());
        let t = scorer.score(&bundle.query_vector, &types, "x-y").unwrap();
        let hit = res.hits.iter().find(|h| h.chunk_id == shared).unwrap();
        assert!((hit.score - 2.0 * t).abs() < 1e-12);
        assert_eq!(hit.support.paths.len(), 2);
    }

    #[test]
    fn provider_mismatch_is_rejected() {
        let embedder = Arc::new(HashEmbedder::new(64));
        let (g, _) = build(&corpus(), &BuilderConfig::default(), embedder.as_ref(), &MetaPathConfig::default(), None).unwrap();
        let other = Arc::new(HashEmbedder::new(32));
        assert!(matches!(
            Retriever::new(Arc::new(g), other, RetrieverConfig::default()),
            Err(RetrieveError::Embed(EmbedError::ProviderMismatch { .. }))
        ));
    }
}
