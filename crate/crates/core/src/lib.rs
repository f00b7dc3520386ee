//! Pseudo-knowledge-graph engine.
//!
//! Raw text is segmented into chunks that are stored as graph nodes next to the entities
//! and relations extracted from them. Queries are answered by three retrieval channels
//! (regular expressions, vectors, meta-paths) whose rankings are fused into
//! provenance-carrying context for a downstream language model.
//!
//! Data-parallel loops run on rayon with the default `parallel` feature and sequentially
//! without it.

mod http;
mod par;

pub mod builder;
pub mod embedding;
pub mod eval;
pub mod graph;
pub mod ids;
pub mod llm;
pub mod metapath;
pub mod prompts;
pub mod retriever;
pub mod text;

pub use builder::{build, BuildError, BuildReport, BuilderConfig, Corpus, Document};
pub use embedding::{cosine, top_k, EmbeddingProvider, EmbeddingProviderConfig, HashEmbedder, Vector};
pub use graph::{ChunkId, EdgeId, EntityId, GraphError, Pkg, PkgHeader, Span};
pub use llm::{LlmClient, LlmError, MockLlm, MockScript};
pub use metapath::{enumerate_metapaths, MetaPathConfig, MetaPathIndex, MetaPathTemplate};
pub use par::parallel_enabled;
pub use retriever::{
    assemble_context, Channel, ChannelResult, ContextItem, ContextPackage, FusionConfig, RetrieveError, Retrieval, Retriever,
    RetrieverConfig,
};
