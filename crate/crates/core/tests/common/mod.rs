//! Seeded generators and brute-force oracles shared by integration and acceptance tests.
//! Oracles use only public graph accessors and never call the code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use pkg_core::builder::{embed_graph, Corpus, Document};
use pkg_core::graph::{ChunkId, EntityId, NewRelation, Pkg, PkgHeader, Span};
use pkg_core::metapath::MetaPathIndex;
use pkg_core::HashEmbedder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct GraphSpec {
    pub nodes: usize,
    pub edges: usize,
    pub types: usize,
    pub relation_types: usize,
    pub dim: usize,
    pub embed: bool,
}

/// Random typed graph with `spec.nodes` entities over `nodes / 4 + 1` chunks. Edges pick
/// random endpoint pairs; about 2% are self-loops and repeated pairs are allowed.
pub fn random_typed_graph(seed: u64, spec: &GraphSpec) -> Pkg {
    let mut rng = rng(seed);
    let mut g = Pkg::new(PkgHeader::new("hash-v1", spec.dim, 4));
    let chunk_count = spec.nodes / 4 + 1;
    let mut chunks = Vec::new();
    let mut offset = 0;
    for i in 0..chunk_count {
        let text = format!("chunk {i} mentions topic {} and topic {}.", rng.gen_range(0..50), rng.gen_range(0..50));
        let len = text.chars().count();
        chunks.push(g.add_chunk("doc", Span::new(offset, offset + len), &text).unwrap());
        offset += len + 1;
    }
    let mut ids = Vec::new();
    for i in 0..spec.nodes {
        let ty = format!("t{}", rng.gen_range(0..spec.types));
        let chunk = chunks[i % chunk_count].clone();
        ids.push(g.add_entity(&format!("node {i}"), &ty, &format!("entity number {i}"), [chunk]).unwrap());
    }
    for _ in 0..spec.edges {
        let a = rng.gen_range(0..ids.len());
        let b = if rng.gen_bool(0.02) { a } else { rng.gen_range(0..ids.len()) };
        let prov = g.entity(ids[a].as_str()).unwrap().source_chunk_ids.clone();
        g.add_relation(NewRelation {
            src: ids[a].clone(),
            dst: ids[b].clone(),
            relation_type: format!("r{}", rng.gen_range(0..spec.relation_types)),
            description: String::new(),
            weight: rng.gen_range(0.0..=1.0),
            provenance_chunk_ids: prov,
            temporal: None,
        })
        .unwrap();
    }
    if spec.embed {
        embed_graph(&mut g, &HashEmbedder::new(spec.dim)).unwrap();
    }
    g
}

/// Undirected simple adjacency built straight from the edge records, self-loops dropped.
pub fn oracle_adjacency(pkg: &Pkg) -> BTreeMap<EntityId, BTreeSet<EntityId>> {
    let mut adj: BTreeMap<EntityId, BTreeSet<EntityId>> =
        pkg.entities().keys().map(|id| (id.clone(), BTreeSet::new())).collect();
    for e in pkg.edges().values() {
        if e.src != e.dst {
            adj.get_mut(&e.src).unwrap().insert(e.dst.clone());
            adj.get_mut(&e.dst).unwrap().insert(e.src.clone());
        }
    }
    adj
}

pub type OraclePostings = BTreeMap<(EntityId, String), Vec<Vec<EntityId>>>;

/// Every simple path with `1 <= edges < max_len`, keyed by start node and type label,
/// each list sorted.
pub fn oracle_postings(pkg: &Pkg, max_len: usize) -> OraclePostings {
    let adj = oracle_adjacency(pkg);
    let ty = |id: &EntityId| pkg.entity(id.as_str()).unwrap().entity_type.clone();
    let mut out: OraclePostings = BTreeMap::new();
    fn walk(
        path: &mut Vec<EntityId>,
        adj: &BTreeMap<EntityId, BTreeSet<EntityId>>,
        max_edges: usize,
        found: &mut Vec<Vec<EntityId>>,
    ) {
        if path.len() > 1 {
            found.push(path.clone());
        }
        if path.len() - 1 == max_edges {
            return;
        }
        let last = path.last().unwrap().clone();
        for next in &adj[&last] {
            if !path.contains(next) {
                path.push(next.clone());
                walk(path, adj, max_edges, found);
                path.pop();
            }
        }
    }
    if max_len < 2 {
        return out;
    }
    for start in adj.keys() {
        let mut found = Vec::new();
        walk(&mut vec![start.clone()], &adj, max_len - 1, &mut found);
        for p in found {
            let label = p.iter().map(&ty).collect::<Vec<_>>().join("-");
            out.entry((start.clone(), label)).or_default().push(p);
        }
    }
    for list in out.values_mut() {
        list.sort();
    }
    out
}

/// Compares an index with the oracle: exact lists where complete, sorted prefixes where
/// truncated, and nothing the oracle lacks.
pub fn compare_with_oracle(index: &MetaPathIndex, oracle: &OraclePostings, cap: usize) -> Result<(), String> {
    for ((node, label), expected) in oracle {
        match index.posting(node.as_str(), label) {
            Some(p) if !p.truncated => {
                if &p.instances != expected {
                    return Err(format!("{node} {label}: {} stored vs {} expected", p.instances.len(), expected.len()));
                }
            }
            Some(p) => {
                if p.instances.len() > cap || expected.len() <= p.instances.len() || expected[..p.instances.len()] != p.instances[..] {
                    return Err(format!("{node} {label}: truncated posting is not a proper prefix"));
                }
            }
            None => {
                let budget_cut = index.node_postings(node.as_str()).is_some_and(|m| m.values().any(|p| p.truncated));
                if !budget_cut {
                    return Err(format!("{node} {label}: missing posting"));
                }
            }
        }
    }
    for (node, postings) in index.postings() {
        for label in postings.keys() {
            if !oracle.contains_key(&(node.clone(), label.clone())) {
                return Err(format!("{node} {label}: posting absent from oracle"));
            }
        }
    }
    Ok(())
}

/// Breadth-first neighborhood from an entity over raw edge records: entity set and the
/// chunks grounding them.
pub fn oracle_neighborhood(pkg: &Pkg, start: &EntityId, hops: usize) -> (BTreeSet<EntityId>, BTreeSet<ChunkId>) {
    let mut adj: BTreeMap<&EntityId, BTreeSet<&EntityId>> = BTreeMap::new();
    for e in pkg.edges().values() {
        adj.entry(&e.src).or_default().insert(&e.dst);
        adj.entry(&e.dst).or_default().insert(&e.src);
    }
    let mut seen = BTreeSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start.clone(), 0usize)]);
    while let Some((node, d)) = queue.pop_front() {
        if d == hops {
            continue;
        }
        for next in adj.get(&node).into_iter().flatten() {
            if seen.insert((*next).clone()) {
                queue.push_back(((*next).clone(), d + 1));
            }
        }
    }
    let chunks = seen
        .iter()
        .flat_map(|id| pkg.entity(id.as_str()).unwrap().source_chunk_ids.iter().cloned())
        .collect();
    (seen, chunks)
}

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ren", "sa", "tor", "vel", "qu", "zan", "dri", "po", "ne", "ix", "ul"];
const FILLER: &[&str] = &[
    "the results were reviewed carefully and the team moved on.",
    "nothing else of note happened that week, according to the notes.",
    "several drafts were circulated before the final version.",
    "it rained for most of the afternoon.",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..4);
    let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    let mut c = w.chars();
    c.next().unwrap().to_uppercase().collect::<String>() + c.as_str()
}

fn sentence(rng: &mut ChaCha8Rng, people: &[String], orgs: &[String], places: &[String]) -> String {
    let p = people.choose(rng).unwrap();
    let q = people.choose(rng).unwrap();
    let o = orgs.choose(rng).unwrap();
    let c = places.choose(rng).unwrap();
    match rng.gen_range(0..12) {
        0 => format!("{p} works at {o}."),
        1 => format!("{o} is based in {c}."),
        2 => format!("{p} collaborated with {q} on the survey."),
        3 => format!("{p} founded {o} in a small office."),
        4 => format!("{o} opened on {}-{:02}-{:02}.", rng.gen_range(1950..2030), rng.gen_range(1..13), rng.gen_range(1..29)),
        5 => format!("Dr. {p} presented \"{} {}\" at the meeting.", word(rng), word(rng)),
        6 => format!("The report, dated {:02}/{:02}/{}, cites {p} and {o}.", rng.gen_range(1..29), rng.gen_range(1..13), rng.gen_range(1950..2030)),
        7 => format!("{p} leads the {} project, e.g. the pilot in {c}!", word(rng)),
        8 => format!("Café owners in {c} met {q}?"),
        9 => format!("{p} managed the {} effort while {q} watched.", word(rng)),
        _ => FILLER.choose(rng).unwrap().to_string(),
    }
}

/// Random multi-document corpus mixing every rule shape, abbreviations, unicode, filler
/// text and the occasional blank document.
pub fn random_corpus(seed: u64) -> Corpus {
    let mut rng = rng(seed);
    let people: Vec<String> = (0..rng.gen_range(3..12)).map(|_| format!("{} {}", word(&mut rng), word(&mut rng))).collect();
    let orgs: Vec<String> = (0..rng.gen_range(2..6)).map(|_| format!("{} Labs", word(&mut rng))).collect();
    let places: Vec<String> = (0..rng.gen_range(2..5)).map(|_| word(&mut rng)).collect();
    let docs = (0..rng.gen_range(1..7))
        .map(|d| {
            let text = if rng.gen_bool(0.05) {
                "  \n".to_string()
            } else {
                (0..rng.gen_range(3..30))
                    .map(|_| sentence(&mut rng, &people, &orgs, &places))
                    .collect::<Vec<_>>()
                    .join(if rng.gen_bool(0.5) { " " } else { "\n" })
            };
            Document::new(format!("doc-{d}.txt"), text)
        })
        .collect::<Vec<_>>();
    let mut corpus = Corpus::new(docs);
    if corpus.documents.iter().all(|d| d.text.trim().is_empty()) {
        corpus.documents.push(Document::new("fallback.txt", "Ada Quill works at Nimbus Labs."));
    }
    corpus
}

/// Corpus of at least `bytes` bytes built from [`random_corpus`] sentence shapes.
pub fn corpus_of_size(seed: u64, bytes: usize) -> Corpus {
    let mut rng = rng(seed);
    let people: Vec<String> = (0..400).map(|_| format!("{} {}", word(&mut rng), word(&mut rng))).collect();
    let orgs: Vec<String> = (0..120).map(|_| format!("{} Labs", word(&mut rng))).collect();
    let places: Vec<String> = (0..60).map(|_| word(&mut rng)).collect();
    let mut docs = Vec::new();
    let mut total = 0;
    while total < bytes {
        let text = (0..40).map(|_| sentence(&mut rng, &people, &orgs, &places)).collect::<Vec<_>>().join(" ");
        total += text.len();
        docs.push(Document::new(format!("doc-{:05}.txt", docs.len()), text));
    }
    Corpus::new(docs)
}
