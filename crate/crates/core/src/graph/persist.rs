//! JSON-Lines persistence.
//!
//! Layout: one header line, then chunk, entity, edge and `mp_posting` records, each group
//! sorted by id. Keys are emitted in ascending order, lines end with LF. Embeddings are
//! stored sparsely as `[[index, value], ...]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{
    ChunkId, EdgeId, EntityId, EntityNode, GraphError, Pkg, PkgHeader, RelationEdge, Span, TextChunkNode,
    FORMAT_VERSION,
};
use crate::embedding::Vector;
use crate::metapath::{MetaPathIndex, Posting, DEFAULT_CAP};

fn sparse(v: &Option<Vector>) -> Value {
    match v {
        None => Value::Null,
        Some(v) => Value::Array(v.to_sparse().into_iter().map(|(i, x)| json!([i, x])).collect()),
    }
}

fn ids<'a, I: IntoIterator<Item = &'a T>, T: AsRef<str> + 'a>(items: I) -> Value {
    Value::Array(items.into_iter().map(|s| Value::String(s.as_ref().to_string())).collect())
}

fn header_record(h: &PkgHeader) -> Value {
    json!({
        "embed_dim": h.embed_dim,
        "embed_provider": h.embed_provider,
        "kind": "header",
        "metapath_max_len": h.metapath_max_len,
        "version": h.version,
    })
}

fn chunk_record(c: &TextChunkNode) -> Value {
    json!({
        "doc_id": c.doc_id,
        "embedding": sparse(&c.embedding),
        "id": c.id,
        "kind": "chunk",
        "span": [c.span.start, c.span.end],
        "text": c.text,
    })
}

fn entity_record(e: &EntityNode) -> Value {
    json!({
        "description": e.description,
        "embedding": sparse(&e.embedding),
        "entity_type": e.entity_type,
        "id": e.id,
        "kind": "entity",
        "name": e.name,
        "normalized_name": e.normalized_name,
        "source_chunk_ids": ids(&e.source_chunk_ids),
    })
}

fn edge_record(e: &RelationEdge) -> Value {
    json!({
        "description": e.description,
        "dst": e.dst,
        "id": e.id,
        "kind": "edge",
        "provenance_chunk_ids": ids(&e.provenance_chunk_ids),
        "relation_type": e.relation_type,
        "src": e.src,
        "temporal": e.temporal,
        "weight": e.weight,
    })
}

fn posting_record(node: &EntityId, template: &str, p: &Posting) -> Value {
    json!({
        "instances": p.instances.iter().map(ids).collect::<Vec<_>>(),
        "kind": "mp_posting",
        "node": node,
        "template": template,
        "truncated": p.truncated,
    })
}

impl Pkg {
    /// Serializes the graph; a pure function of graph content.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |v: Value| {
            // serde_json maps are BTreeMaps here, so keys come out sorted.
            out.push_str(&v.to_string());
            out.push('\n');
        };
        push(header_record(&self.header));
        self.chunks.values().for_each(|c| push(chunk_record(c)));
        self.entities.values().for_each(|e| push(entity_record(e)));
        self.edges.values().for_each(|e| push(edge_record(e)));
        for (node, per_node) in self.metapaths.postings() {
            for (template, posting) in per_node {
                push(posting_record(node, template, posting));
            }
        }
        out
    }

    /// Writes the graph to `path`, returning the number of bytes written.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64, GraphError> {
        let bytes = self.to_jsonl();
        let mut file = fs::File::create(path)?;
        file.write_all(bytes.as_bytes())?;
        file.flush()?;
        Ok(bytes.len() as u64)
    }

    /// Reads and validates a graph; any violation fails the load.
    pub fn load(path: impl AsRef<Path>) -> Result<Pkg, GraphError> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn from_jsonl(input: &str) -> Result<Pkg, GraphError> {
        let pkg = Self::from_jsonl_unchecked(input)?;
        let violations = pkg.validate();
        if violations.is_empty() {
            Ok(pkg)
        } else {
            Err(GraphError::Integrity(violations))
        }
    }

    /// Parses a graph without integrity checks, so that [`Pkg::validate`] can report on
    /// damaged files. Structural format errors still fail.
    pub fn from_jsonl_unchecked(input: &str) -> Result<Pkg, GraphError> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| format_err(1, "missing header line"))?;
        let header = parse_header(first)?;
        let mut pkg = Pkg::new(header);
        let mut postings: BTreeMap<EntityId, BTreeMap<String, Posting>> = BTreeMap::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let record: Map<String, Value> = match serde_json::from_str(line) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(format_err(line_no, "record is not an object")),
                Err(e) => return Err(format_err(line_no, &format!("malformed JSON: {e}"))),
            };
            let r = Record { map: &record, line: line_no };
            match r.str("kind")? {
                "chunk" => {
                    let chunk = parse_chunk(&r, pkg.header.embed_dim)?;
                    if pkg.chunks.insert(chunk.id.clone(), chunk).is_some() {
                        return Err(r.duplicate());
                    }
                }
                "entity" => {
                    let entity = parse_entity(&r, pkg.header.embed_dim)?;
                    if pkg.entities.insert(entity.id.clone(), entity).is_some() {
                        return Err(r.duplicate());
                    }
                }
                "edge" => {
                    let edge = parse_edge(&r)?;
                    if pkg.edges.insert(edge.id.clone(), edge).is_some() {
                        return Err(r.duplicate());
                    }
                }
                "mp_posting" => {
                    let node = EntityId::new(r.str("node")?);
                    let template = r.str("template")?.to_string();
                    let instances = r
                        .array("instances")?
                        .iter()
                        .map(|inst| r.id_list(inst).map(|v| v.into_iter().map(EntityId::new).collect()))
                        .collect::<Result<Vec<Vec<EntityId>>, _>>()?;
                    let truncated = r
                        .map
                        .get("truncated")
                        .and_then(Value::as_bool)
                        .ok_or_else(|| r.err("missing boolean \"truncated\""))?;
                    let slot = postings.entry(node).or_default();
                    if slot.insert(template, Posting { instances, truncated }).is_some() {
                        return Err(r.duplicate());
                    }
                }
                "header" => return Err(r.err("second header record")),
                other => return Err(r.err(&format!("unknown record kind {other:?}"))),
            }
        }
        let cap = postings
            .values()
            .flat_map(|m| m.values())
            .filter(|p| p.truncated)
            .map(|p| p.instances.len())
            .max()
            .filter(|&c| c > 0)
            .unwrap_or(DEFAULT_CAP);
        pkg.metapaths = MetaPathIndex::from_postings(pkg.header.metapath_max_len, cap, postings);
        pkg.rebuild_derived();
        Ok(pkg)
    }
}

fn format_err(line: usize, message: &str) -> GraphError {
    GraphError::Format {
        line,
        message: message.to_string(),
    }
}

fn parse_header(line: &str) -> Result<PkgHeader, GraphError> {
    let value: Value = serde_json::from_str(line).map_err(|e| format_err(1, &format!("malformed header: {e}")))?;
    let Value::Object(map) = value else {
        return Err(format_err(1, "header is not an object"));
    };
    let r = Record { map: &map, line: 1 };
    if r.str("kind")? != "header" {
        return Err(r.err("first record must be the header"));
    }
    let version = r.uint("version")?;
    if version != FORMAT_VERSION as u64 {
        return Err(r.err(&format!("unsupported format version {version}")));
    }
    Ok(PkgHeader {
        version: FORMAT_VERSION,
        embed_dim: r.uint("embed_dim")? as usize,
        embed_provider: r.str("embed_provider")?.to_string(),
        metapath_max_len: r.uint("metapath_max_len")? as usize,
    })
}

struct Record<'a> {
    map: &'a Map<String, Value>,
    line: usize,
}

impl Record<'_> {
    fn err(&self, message: &str) -> GraphError {
        format_err(self.line, message)
    }

    fn duplicate(&self) -> GraphError {
        self.err("duplicate id")
    }

    fn get(&self, key: &str) -> Result<&Value, GraphError> {
        self.map.get(key).ok_or_else(|| self.err(&format!("missing field {key:?}")))
    }

    fn str(&self, key: &str) -> Result<&str, GraphError> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| self.err(&format!("field {key:?} must be a string")))
    }

    fn uint(&self, key: &str) -> Result<u64, GraphError> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| self.err(&format!("field {key:?} must be a non-negative integer")))
    }

    fn float(&self, key: &str) -> Result<f64, GraphError> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| self.err(&format!("field {key:?} must be a number")))
    }

    fn array(&self, key: &str) -> Result<&Vec<Value>, GraphError> {
        self.get(key)?
            .as_array()
            .ok_or_else(|| self.err(&format!("field {key:?} must be an array")))
    }

    fn id_list(&self, value: &Value) -> Result<Vec<String>, GraphError> {
        value
            .as_array()
            .ok_or_else(|| self.err("expected an array of ids"))?
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| self.err("ids must be strings")))
            .collect()
    }

    fn id_set<T: From<String> + Ord>(&self, key: &str) -> Result<BTreeSet<T>, GraphError> {
        let list = self.id_list(self.get(key)?)?;
        let n = list.len();
        let set: BTreeSet<T> = list.into_iter().map(T::from).collect();
        if set.len() != n {
            return Err(self.err(&format!("duplicate ids in {key:?}")));
        }
        Ok(set)
    }

    fn embedding(&self, dim: usize) -> Result<Option<Vector>, GraphError> {
        let value = self.get("embedding")?;
        if value.is_null() {
            return Ok(None);
        }
        let entries = value
            .as_array()
            .ok_or_else(|| self.err("embedding must be null or an array"))?
            .iter()
            .map(|pair| match pair.as_array().map(Vec::as_slice) {
                Some([i, x]) => match (i.as_u64(), x.as_f64()) {
                    (Some(i), Some(x)) if i <= u32::MAX as u64 => Ok((i as u32, x)),
                    _ => Err(self.err("embedding entries must be [index, value]")),
                },
                _ => Err(self.err("embedding entries must be [index, value]")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Vector::from_sparse(dim, &entries)
            .map(Some)
            .ok_or_else(|| self.err("embedding index out of range or unsorted"))
    }
}

impl From<String> for ChunkId {
    fn from(s: String) -> Self {
        ChunkId::new(s)
    }
}

impl From<String> for EntityId {
    fn from(s: String) -> Self {
        EntityId::new(s)
    }
}

impl From<String> for EdgeId {
    fn from(s: String) -> Self {
        EdgeId::new(s)
    }
}

fn parse_chunk(r: &Record<'_>, dim: usize) -> Result<TextChunkNode, GraphError> {
    let span = r.array("span")?;
    let (start, end) = match span.as_slice() {
        [s, e] => match (s.as_u64(), e.as_u64()) {
            (Some(s), Some(e)) => (s as usize, e as usize),
            _ => return Err(r.err("span must hold two non-negative integers")),
        },
        _ => return Err(r.err("span must be [start, end]")),
    };
    Ok(TextChunkNode {
        id: ChunkId::new(r.str("id")?),
        doc_id: r.str("doc_id")?.to_string(),
        span: Span::new(start, end),
        text: r.str("text")?.to_string(),
        embedding: r.embedding(dim)?,
    })
}

fn parse_entity(r: &Record<'_>, dim: usize) -> Result<EntityNode, GraphError> {
    Ok(EntityNode {
        id: EntityId::new(r.str("id")?),
        name: r.str("name")?.to_string(),
        normalized_name: r.str("normalized_name")?.to_string(),
        entity_type: r.str("entity_type")?.to_string(),
        description: r.str("description")?.to_string(),
        source_chunk_ids: r.id_set("source_chunk_ids")?,
        embedding: r.embedding(dim)?,
    })
}

fn parse_edge(r: &Record<'_>) -> Result<RelationEdge, GraphError> {
    let temporal = match r.get("temporal")? {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        _ => return Err(r.err("temporal must be null or a string")),
    };
    Ok(RelationEdge {
        id: EdgeId::new(r.str("id")?),
        src: EntityId::new(r.str("src")?),
        dst: EntityId::new(r.str("dst")?),
        relation_type: r.str("relation_type")?.to_string(),
        description: r.str("description")?.to_string(),
        weight: r.float("weight")?,
        provenance_chunk_ids: r.id_set("provenance_chunk_ids")?,
        temporal,
    })
}
