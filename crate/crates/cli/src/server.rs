//! HTTP retrieval service over one frozen graph.
//!
//! The listener binds before the graph loads; until loading finishes every endpoint
//! answers 503. All bodies are JSON objects with sorted keys.

use std::io::Write;
use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pkg_core::graph::{EntityNode, RelationEdge};
use pkg_core::{Channel, Pkg, RetrieveError, Retriever, RetrieverConfig};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::commands::{load_graph, retrieval_json, retriever_for};
use crate::ServeArgs;

pub const DEFAULT_K: usize = 10;

#[derive(Clone, Default)]
pub struct AppState {
    retriever: Arc<OnceLock<Arc<Retriever>>>,
}

impl AppState {
    pub fn loading() -> Self {
        Self::default()
    }

    pub fn ready(retriever: Retriever) -> Self {
        let state = Self::default();
        state.set(retriever);
        state
    }

    pub fn set(&self, retriever: Retriever) {
        let _ = self.retriever.set(Arc::new(retriever));
    }

    fn get(&self) -> Option<Arc<Retriever>> {
        self.retriever.get().cloned()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    query: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    channels: Option<Vec<String>>,
}

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

fn loading() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "graph is still loading")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/retrieve", post(retrieve))
        .route("/stats", get(stats))
        .route("/node/{id}", get(node))
        .with_state(state)
}

async fn retrieve(State(state): State<AppState>, body: Bytes) -> Response {
    let Some(retriever) = state.get() else { return loading() };
    let request: RetrieveRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let k = request.k.unwrap_or(DEFAULT_K);
    if k == 0 {
        return error(StatusCode::BAD_REQUEST, "k must be at least 1");
    }
    let channels = match request.channels {
        Some(list) => match Channel::parse_list(&list.join(",")) {
            Ok(c) => c,
            Err(e) => return error(StatusCode::BAD_REQUEST, e),
        },
        None => Channel::ALL.to_vec(),
    };
    let outcome = tokio::task::spawn_blocking(move || retriever.retrieve(&request.query, &channels, k)).await;
    match outcome {
        Ok(Ok(retrieval)) => Json(retrieval_json(&retrieval)).into_response(),
        Ok(Err(
            e @ (RetrieveError::EmptyQuery
            | RetrieveError::BadPattern { .. }
            | RetrieveError::NoChannels
            | RetrieveError::UnknownChannel(_)
            | RetrieveError::InvalidConfig(_)),
        )) => error(StatusCode::BAD_REQUEST, e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

/// Graph counts and header fields.
pub fn stats_json(pkg: &Pkg) -> Value {
    let h = pkg.header();
    json!({
        "chunks": pkg.chunks().len(),
        "edges": pkg.edges().len(),
        "embed_dim": h.embed_dim,
        "embed_provider": h.embed_provider,
        "entities": pkg.entities().len(),
        "metapath_instances": pkg.metapaths().stored_instance_count(),
        "metapath_max_len": h.metapath_max_len,
        "templates": pkg.metapaths().catalog().len(),
        "version": h.version,
    })
}

async fn stats(State(state): State<AppState>) -> Response {
    match state.get() {
        Some(r) => Json(stats_json(r.pkg())).into_response(),
        None => loading(),
    }
}

fn entity_json(e: &EntityNode) -> Value {
    json!({
        "description": e.description,
        "entity_type": e.entity_type,
        "id": e.id,
        "kind": "entity",
        "name": e.name,
        "normalized_name": e.normalized_name,
        "source_chunk_ids": e.source_chunk_ids,
    })
}

fn edge_json(e: &RelationEdge) -> Value {
    json!({
        "description": e.description,
        "dst": e.dst,
        "id": e.id,
        "kind": "edge",
        "provenance_chunk_ids": e.provenance_chunk_ids,
        "relation_type": e.relation_type,
        "src": e.src,
        "temporal": e.temporal,
        "weight": e.weight,
    })
}

/// The node record for any chunk, entity or edge id, with its neighbors: adjacent
/// entities (and incident edges) for an entity, linked entities for a chunk, endpoints
/// for an edge.
pub fn node_json(pkg: &Pkg, id: &str) -> Option<Value> {
    let entity_list = |ids: &mut dyn Iterator<Item = &pkg_core::EntityId>| -> Vec<Value> {
        ids.filter_map(|i| pkg.entity(i.as_str())).map(entity_json).collect()
    };
    if let Some(e) = pkg.entity(id) {
        let mut record = entity_json(e);
        record["neighbors"] = json!(entity_list(&mut pkg.neighbors(id).into_iter()));
        let edges: Vec<Value> = pkg.incident_edges(id).into_iter().filter_map(|i| pkg.edge(i.as_str())).map(edge_json).collect();
        record["edges"] = json!(edges);
        return Some(record);
    }
    if let Some(c) = pkg.chunk(id) {
        return Some(json!({
            "doc_id": c.doc_id,
            "id": c.id,
            "kind": "chunk",
            "neighbors": entity_list(&mut pkg.chunk_entities(id)),
            "span": { "end": c.span.end, "start": c.span.start },
            "text": c.text,
        }));
    }
    pkg.edge(id).map(|e| {
        let mut record = edge_json(e);
        let mut ends = vec![&e.src, &e.dst];
        ends.dedup();
        record["neighbors"] = json!(entity_list(&mut ends.into_iter()));
        record
    })
}

async fn node(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(retriever) = state.get() else { return loading() };
    match node_json(retriever.pkg(), &id) {
        Some(record) => Json(record).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown node {id}")),
    }
}

/// Binds, announces `listening on http://ADDR` on stdout, loads the graph in the
/// background and serves until interrupted. A graph that fails to load ends the process
/// with exit code 1.
pub async fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let listener = TcpListener::bind((args.host.as_str(), args.port))
        .await
        .with_context(|| format!("binding {}:{}", args.host, args.port))?;
    let addr: SocketAddr = listener.local_addr()?;
    println!("listening on http://{addr}");
    std::io::stdout().flush()?;
    let state = AppState::loading();
    let loader = state.clone();
    let path = args.graph.clone();
    tokio::task::spawn_blocking(move || {
        match load_graph(&path).and_then(|g| retriever_for(g, None, RetrieverConfig::default())) {
            Ok(r) => {
                log::info!("graph {} loaded", path.display());
                loader.set(r);
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                std::process::exit(1);
            }
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub fn serve_blocking(args: &ServeArgs) -> anyhow::Result<()> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(serve(args))
}
