//! Query analysis: entity matching, relation hints and hypothetical answers.

use std::collections::{BTreeSet, HashMap};

use crate::embedding::{EmbeddingProvider, Vector};
use crate::graph::{EntityId, Pkg};
use crate::llm::{LlmClient, LlmError, LlmRequest};
use crate::prompts::{render, PromptConfig};
use crate::text::{default_stopwords, normalize_name, word_tokens};

use super::RetrieveError;

/// A query n-gram that names one or more graph entities (one per type).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryEntity {
    pub surface: String,
    pub entity_ids: Vec<EntityId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryBundle {
    pub raw_text: String,
    pub query_vector: Vector,
    pub query_entities: Vec<QueryEntity>,
    pub relation_hints: Vec<String>,
    pub hypothetical_answers: Vec<(String, Vector)>,
}

impl QueryBundle {
    pub fn entity_ids(&self) -> BTreeSet<&EntityId> {
        self.query_entities.iter().flat_map(|q| &q.entity_ids).collect()
    }

    /// Types of every matched entity.
    pub fn entity_types(&self, pkg: &Pkg) -> BTreeSet<String> {
        self.entity_ids()
            .into_iter()
            .filter_map(|id| pkg.entity(id.as_str()))
            .map(|e| e.entity_type.clone())
            .collect()
    }

    /// The query vector followed by every hypothetical-answer vector.
    pub fn vectors(&self) -> impl Iterator<Item = &Vector> {
        std::iter::once(&self.query_vector).chain(self.hypothetical_answers.iter().map(|(_, v)| v))
    }
}

/// Lookup from normalized entity name to entity ids.
#[derive(Debug, Clone, Default)]
pub struct NameIndex {
    names: HashMap<String, Vec<EntityId>>,
    max_tokens: usize,
}

struct Token<'a> {
    start: usize,
    word: &'a str,
}

fn query_tokens(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive(char::is_whitespace) {
        let piece = raw.trim_end();
        let lead = piece.len() - piece.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
        let word = piece[lead..].trim_end_matches(|c: char| !c.is_alphanumeric());
        if !word.is_empty() {
            out.push(Token {
                start: offset + lead,
                word,
            });
        }
        offset += raw.len();
    }
    out
}

fn strip_possessive(word: &str) -> Option<&str> {
    word.strip_suffix("'s").or_else(|| word.strip_suffix("\u{2019}s")).filter(|w| !w.is_empty())
}

impl NameIndex {
    pub fn new(pkg: &Pkg) -> Self {
        let mut names: HashMap<String, Vec<EntityId>> = HashMap::new();
        let mut max_tokens = 0;
        for entity in pkg.entities().values() {
            max_tokens = max_tokens.max(entity.normalized_name.split(' ').count());
            names.entry(entity.normalized_name.clone()).or_default().push(entity.id.clone());
        }
        Self { names, max_tokens }
    }

    /// Longest-first, left-to-right, case-folded matching of query n-grams against entity
    /// names. A trailing possessive on the last token of an n-gram is tolerated.
    pub fn find(&self, text: &str) -> Vec<QueryEntity> {
        let tokens = query_tokens(text);
        let mut out: Vec<QueryEntity> = Vec::new();
        let mut i = 0;
        'outer: while i < tokens.len() {
            for len in (1..=self.max_tokens.min(tokens.len() - i)).rev() {
                let span = &tokens[i..i + len];
                let head: Vec<&str> = span[..len - 1].iter().map(|t| t.word).collect();
                let last = span[len - 1].word;
                for last_word in [Some(last), strip_possessive(last)].into_iter().flatten() {
                    let mut words = head.clone();
                    words.push(last_word);
                    if let Some(ids) = self.names.get(&normalize_name(&words.join(" "))) {
                        let end = span[len - 1].start + last_word.len();
                        if !out.iter().any(|q| q.entity_ids == *ids) {
                            out.push(QueryEntity {
                                surface: text[span[0].start..end].to_string(),
                                entity_ids: ids.clone(),
                            });
                        }
                        i += len;
                        continue 'outer;
                    }
                }
            }
            i += 1;
        }
        out
    }
}

fn stem(word: &str) -> &str {
    for suffix in ["ing", "ed", "es", "s"] {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= 3 {
                return base;
            }
        }
    }
    word
}

/// Relation types from `vocabulary` sharing a stemmed content word with the query.
pub fn relation_hints<'a>(text: &str, vocabulary: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let stopwords = default_stopwords();
    let query: BTreeSet<String> = word_tokens(text)
        .into_iter()
        .filter(|w| !stopwords.contains(w))
        .map(|w| stem(&w).to_string())
        .collect();
    let hints: BTreeSet<String> = vocabulary
        .into_iter()
        .filter(|rel| {
            rel.split(|c: char| c == '_' || c == '-' || c.is_whitespace())
                .map(str::to_lowercase)
                .filter(|p| p.chars().count() >= 3 && !stopwords.contains(p))
                .any(|p| query.contains(stem(&p)))
        })
        .map(str::to_string)
        .collect();
    hints.into_iter().collect()
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix(['-', '*']) {
        return rest.trim();
    }
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    match line[digits..].strip_prefix(['.', ')']) {
        Some(rest) if digits > 0 => rest.trim(),
        _ => line,
    }
}

/// Requests hypothetical answers: one per non-empty reply line, list markers removed.
pub fn hypothetical_answers(
    query: &str,
    client: &dyn LlmClient,
    prompts: &PromptConfig,
    max: usize,
) -> Result<Vec<String>, LlmError> {
    if max == 0 {
        return Ok(Vec::new());
    }
    let reply = client.complete(&LlmRequest::complete(render(&prompts.hypothetical, &[("query", query)])))?;
    Ok(reply
        .lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .take(max)
        .map(str::to_string)
        .collect())
}

/// Builds a [`QueryBundle`]. An unreachable model only costs the hypothetical answers.
pub fn analyze_query(
    text: &str,
    pkg: &Pkg,
    provider: &dyn EmbeddingProvider,
    llm: Option<(&dyn LlmClient, &PromptConfig)>,
) -> Result<QueryBundle, RetrieveError> {
    let vocabulary: BTreeSet<&str> = pkg.edges().values().map(|e| e.relation_type.as_str()).collect();
    analyze_with(text, &NameIndex::new(pkg), vocabulary, provider, llm, 2)
}

pub(crate) fn analyze_with<'a>(
    text: &str,
    names: &NameIndex,
    vocabulary: impl IntoIterator<Item = &'a str>,
    provider: &dyn EmbeddingProvider,
    llm: Option<(&dyn LlmClient, &PromptConfig)>,
    max_hypothetical: usize,
) -> Result<QueryBundle, RetrieveError> {
    if text.trim().is_empty() {
        return Err(RetrieveError::EmptyQuery);
    }
    let query_vector = provider.embed(text)?;
    let mut hypothetical = Vec::new();
    if let Some((client, prompts)) = llm {
        match hypothetical_answers(text, client, prompts, max_hypothetical) {
            Ok(answers) => {
                for answer in answers {
                    let v = provider.embed(&answer)?;
                    hypothetical.push((answer, v));
                }
            }
            Err(e) => log::warn!("no hypothetical answers: {e}"),
        }
    }
    Ok(QueryBundle {
        raw_text: text.to_string(),
        query_vector,
        query_entities: names.find(text),
        relation_hints: relation_hints(text, vocabulary),
        hypothetical_answers: hypothetical,
    })
}
