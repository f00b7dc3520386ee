//! Retrieval evaluation: recall@k and MRR over chunk-level gold labels, per channel
//! setting, plus a seeded synthetic corpus with planted one- and two-hop facts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::builder::{Corpus, Document};
use crate::graph::{ChunkId, Pkg};
use crate::retriever::{Channel, RetrieveError, Retriever};

pub const TAG_ONE_HOP: &str = "1hop";
pub const TAG_TWO_HOP: &str = "2hop";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("QA record {index}: gold chunk {chunk} is not in the graph")]
    UnresolvedGold { index: usize, chunk: String },
    #[error("QA record {index} has no gold chunks")]
    NoGold { index: usize },
    #[error("QA file {path}: {message}")]
    BadFile { path: String, message: String },
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    pub gold_chunk_ids: BTreeSet<ChunkId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// Reads JSON-Lines QA records.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>, EvalError> {
    let path = path.as_ref();
    let bad = |message: String| EvalError::BadFile {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Writes QA records as JSON Lines with sorted keys.
pub fn save_records(path: impl AsRef<Path>, records: &[EvalRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        let value = serde_json::to_value(r).expect("records serialize");
        out.push_str(&value.to_string());
        out.push('\n');
    }
    fs::write(path, out)
}

/// Every gold id must name a chunk of `pkg`.
pub fn check_records(records: &[EvalRecord], pkg: &Pkg) -> Result<(), EvalError> {
    for (index, r) in records.iter().enumerate() {
        if r.gold_chunk_ids.is_empty() {
            return Err(EvalError::NoGold { index });
        }
        if let Some(missing) = r.gold_chunk_ids.iter().find(|c| pkg.chunk(c.as_str()).is_none()) {
            return Err(EvalError::UnresolvedGold {
                index,
                chunk: missing.to_string(),
            });
        }
    }
    Ok(())
}

/// 1 when a gold chunk appears in the first `k` results.
pub fn hit_at_k(ranked: &[ChunkId], gold: &BTreeSet<ChunkId>, k: usize) -> f64 {
    if ranked.iter().take(k).any(|c| gold.contains(c)) {
        1.0
    } else {
        0.0
    }
}

/// Reciprocal 1-based rank of the first gold chunk in `ranked`, 0 when absent.
pub fn reciprocal_rank(ranked: &[ChunkId], gold: &BTreeSet<ChunkId>) -> f64 {
    ranked
        .iter()
        .position(|c| gold.contains(c))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub queries: usize,
    pub recall_at_k: f64,
    pub mrr: f64,
}

#[derive(Default)]
struct Accumulator {
    queries: usize,
    hits: f64,
    rr: f64,
}

impl Accumulator {
    fn add(&mut self, hit: f64, rr: f64) {
        self.queries += 1;
        self.hits += hit;
        self.rr += rr;
    }

    fn metrics(&self) -> Metrics {
        let n = self.queries.max(1) as f64;
        Metrics {
            queries: self.queries,
            recall_at_k: self.hits / n,
            mrr: self.rr / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingReport {
    pub channels: Vec<Channel>,
    pub k: usize,
    pub overall: Metrics,
    pub per_tag: BTreeMap<String, Metrics>,
    pub mean_latency_ms: f64,
}

impl SettingReport {
    pub fn label(&self) -> String {
        self.channels.iter().map(|c| c.name()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub settings: Vec<SettingReport>,
}

impl EvalReport {
    pub fn setting(&self, channels: &[Channel]) -> Option<&SettingReport> {
        let wanted: BTreeSet<&Channel> = channels.iter().collect();
        self.settings.iter().find(|s| s.channels.iter().collect::<BTreeSet<_>>() == wanted)
    }

    /// Full report, keys sorted.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("reports serialize")
    }

    /// Report without timings: a pure function of graph, records and settings.
    pub fn metrics_json(&self) -> Value {
        let settings: Vec<Value> = self
            .settings
            .iter()
            .map(|s| {
                json!({
                    "channels": s.channels,
                    "k": s.k,
                    "overall": s.overall,
                    "per_tag": s.per_tag,
                })
            })
            .collect();
        json!({ "settings": settings })
    }

    /// Fixed-width text table, one row per setting and tag.
    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:<8} {:>7} {:>10} {:>8} {:>12}\n", "channels", "tag", "queries", "recall@k", "mrr", "latency_ms");
        for s in &self.settings {
            let mut rows = vec![("all".to_string(), &s.overall)];
            rows.extend(s.per_tag.iter().map(|(t, m)| (t.clone(), m)));
            for (tag, m) in rows {
                out.push_str(&format!(
                    "{:<24} {:<8} {:>7} {:>10.4} {:>8.4} {:>12.3}\n",
                    s.label(),
                    tag,
                    m.queries,
                    m.recall_at_k,
                    m.mrr,
                    s.mean_latency_ms
                ));
            }
        }
        out
    }
}

/// Runs every record under every channel setting, keeping the top `k` items.
pub fn evaluate(
    retriever: &Retriever,
    records: &[EvalRecord],
    settings: &[Vec<Channel>],
    k: usize,
) -> Result<EvalReport, EvalError> {
    check_records(records, retriever.pkg())?;
    let mut reports = Vec::new();
    for channels in settings {
        let mut overall = Accumulator::default();
        let mut per_tag: BTreeMap<String, Accumulator> = BTreeMap::new();
        let mut elapsed = 0.0;
        for record in records {
            let start = Instant::now();
            let retrieval = retriever.retrieve(&record.question, channels, k)?;
            elapsed += start.elapsed().as_secs_f64() * 1000.0;
            let ranked: Vec<ChunkId> = retrieval.items.into_iter().map(|i| i.chunk_id).collect();
            let hit = hit_at_k(&ranked, &record.gold_chunk_ids, k);
            let rr = reciprocal_rank(&ranked, &record.gold_chunk_ids);
            overall.add(hit, rr);
            if let Some(tag) = &record.tag {
                per_tag.entry(tag.clone()).or_default().add(hit, rr);
            }
        }
        let mut channels = channels.clone();
        channels.sort();
        channels.dedup();
        reports.push(SettingReport {
            channels,
            k,
            overall: overall.metrics(),
            per_tag: per_tag.into_iter().map(|(t, a)| (t, a.metrics())).collect(),
            mean_latency_ms: elapsed / records.len().max(1) as f64,
        });
    }
    Ok(EvalReport { settings: reports })
}

/// The ablation ladder: vector only, then each extra channel, then all three.
pub fn default_settings() -> Vec<Vec<Channel>> {
    vec![
        vec![Channel::Vector],
        vec![Channel::Regex, Channel::Vector],
        vec![Channel::Vector, Channel::Metapath],
        vec![Channel::Regex, Channel::Vector, Channel::Metapath],
    ]
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gr", "kr", "tr", "st",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "eo", "ua"];
const CODAS: &[&str] = &["", "n", "r", "s", "l", "x", "th", "nd"];
const ORG_SUFFIXES: &[&str] = &["Labs", "Systems", "Dynamics", "Industries"];
const FILLERS: &[&str] = &[
    "annual", "regional", "quarterly", "informal", "public", "local", "national", "online", "open", "private",
];
const EVENTS: &[&str] = &["summit", "fair", "survey", "forum", "ranking", "festival", "panel", "report"];

/// Unique capitalized pseudo-words; no two share a lowercase form.
struct NameSource {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl NameSource {
    fn word(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).expect("non-empty"));
                w.push_str(VOWELS.choose(&mut self.rng).expect("non-empty"));
            }
            w.push_str(CODAS.choose(&mut self.rng).expect("non-empty"));
            if self.used.insert(w.clone()) {
                let mut chars = w.chars();
                let first = chars.next().expect("non-empty").to_ascii_uppercase();
                return first.to_string() + chars.as_str();
            }
        }
    }
}

/// A corpus planting `n` one-hop and `n` two-hop facts, one sentence per document, plus
/// distractors that reuse the question wording.
///
/// Two-hop: "P works at O." and the bridge "O is based in C."; the question asks for the
/// city hosting P's employer and its gold chunk is the bridge, which shares no word with
/// the question. One-hop: "Q works at R." asked as "Which organization employs Q?".
pub fn generate_synthetic(n: usize, seed: u64) -> (Corpus, Vec<EvalRecord>) {
    let mut names = NameSource {
        rng: ChaCha8Rng::seed_from_u64(seed),
        used: BTreeSet::new(),
    };
    let mut docs = Vec::new();
    let mut records = Vec::new();
    let push = |docs: &mut Vec<Document>, id: String, text: String| -> ChunkId {
        let len = text.chars().count();
        let chunk = ChunkId::derive(&id, 0, len, &text);
        docs.push(Document::new(id, text));
        chunk
    };
    for i in 0..n {
        let person = format!("{} {}", names.word(2), names.word(2));
        let org = format!("{} {}", names.word(2), ORG_SUFFIXES[i % ORG_SUFFIXES.len()]);
        let city = names.word(3);
        push(&mut docs, format!("h2-{i:04}-a"), format!("{person} works at {org}."));
        let bridge = push(&mut docs, format!("h2-{i:04}-b"), format!("{org} is based in {city}."));
        records.push(EvalRecord {
            question: format!("Which city hosts the employer of {person}?"),
            gold_chunk_ids: [bridge].into_iter().collect(),
            tag: Some(TAG_TWO_HOP.into()),
        });

        let person = format!("{} {}", names.word(2), names.word(2));
        let org = format!("{} {}", names.word(2), ORG_SUFFIXES[(i + 1) % ORG_SUFFIXES.len()]);
        let fact = push(&mut docs, format!("h1-{i:04}"), format!("{person} works at {org}."));
        records.push(EvalRecord {
            question: format!("Which organization employs {person}?"),
            gold_chunk_ids: [fact].into_iter().collect(),
            tag: Some(TAG_ONE_HOP.into()),
        });

        let filler = FILLERS.choose(&mut names.rng).expect("non-empty");
        let event = EVENTS.choose(&mut names.rng).expect("non-empty");
        let year = names.rng.gen_range(1990..2030);
        push(
            &mut docs,
            format!("x-{i:04}-a"),
            format!("which city hosts the {filler} employer {event} of {year} is still debated."),
        );
        push(
            &mut docs,
            format!("x-{i:04}-b"),
            format!("the {filler} {event} asks which organization employs the most people."),
        );
    }
    (Corpus::new(docs), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::word_tokens;

    fn ids(xs: &[&str]) -> Vec<ChunkId> {
        xs.iter().map(|x| ChunkId::new(*x)).collect()
    }

    #[test]
    fn metric_basics() {
        let gold: BTreeSet<ChunkId> = ids(&["g"]).into_iter().collect();
        assert_eq!(hit_at_k(&ids(&["g", "x"]), &gold, 1), 1.0);
        assert_eq!(reciprocal_rank(&ids(&["g", "x"]), &gold), 1.0);
        assert_eq!(hit_at_k(&ids(&["x", "g"]), &gold, 1), 0.0);
        assert_eq!(reciprocal_rank(&ids(&["x", "g"]), &gold), 0.5);
        assert_eq!(reciprocal_rank(&ids(&["x"]), &gold), 0.0);
    }

    #[test]
    fn generator_is_seeded_and_token_disjoint() {
        let (c1, r1) = generate_synthetic(20, 7);
        let (c2, r2) = generate_synthetic(20, 7);
        assert_eq!(c1, c2);
        assert_eq!(r1, r2);
        assert_ne!(generate_synthetic(20, 8).0, c1);
        assert_eq!(r1.len(), 40);
        let by_chunk: BTreeMap<ChunkId, &Document> = c1
            .documents
            .iter()
            .map(|d| (ChunkId::derive(&d.doc_id, 0, d.text.chars().count(), &d.text), d))
            .collect();
        for r in r1.iter().filter(|r| r.tag.as_deref() == Some(TAG_TWO_HOP)) {
            let q: BTreeSet<String> = word_tokens(&r.question).into_iter().collect();
            for gold in &r.gold_chunk_ids {
                let bridge: BTreeSet<String> = word_tokens(&by_chunk[gold].text).into_iter().collect();
                assert!(q.is_disjoint(&bridge), "{:?} vs {:?}", r.question, by_chunk[gold].text);
            }
        }
    }

    #[test]
    fn planted_two_hop_needs_metapath() {
        use crate::builder::{build, BuilderConfig};
        use crate::embedding::HashEmbedder;
        use crate::metapath::MetaPathConfig;
        use crate::retriever::RetrieverConfig;
        use std::sync::Arc;

        let (corpus, records) = generate_synthetic(10, 3);
        let embedder = Arc::new(HashEmbedder::new(256));
        let (g, _) = build(&corpus, &BuilderConfig::default(), embedder.as_ref(), &MetaPathConfig::default(), None).unwrap();
        let r = Retriever::new(Arc::new(g), embedder, RetrieverConfig::default()).unwrap();
        let report = evaluate(&r, &records, &default_settings(), 5).unwrap();
        let two_hop = |c: &[Channel]| report.setting(c).unwrap().per_tag[TAG_TWO_HOP].recall_at_k;
        let full = [Channel::Regex, Channel::Vector, Channel::Metapath];
        assert_eq!(two_hop(&full), 1.0, "{}", report.table());
        assert!(two_hop(&[Channel::Vector]) < 0.5, "{}", report.table());
    }

    #[test]
    fn records_round_trip_through_files() {
        let (_, records) = generate_synthetic(3, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qa.jsonl");
        save_records(&path, &records).unwrap();
        assert_eq!(load_records(&path).unwrap(), records);
        fs::write(&path, "{oops").unwrap();
        assert!(matches!(load_records(&path), Err(EvalError::BadFile { .. })));
    }
}
