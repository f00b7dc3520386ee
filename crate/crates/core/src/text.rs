//! Shared text normalization: name keys, type tags, tokenization and stop-word removal.

use std::collections::BTreeSet;

/// Small English stop-word list used by the builder and the hashing embedder's callers.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has",
    "have", "he", "her", "his", "how", "i", "if", "in", "into", "is", "it", "its", "may", "more",
    "most", "no", "not", "of", "on", "or", "our", "she", "so", "some", "such", "than", "that",
    "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "under",
    "up", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why",
    "will", "with", "would", "you", "your",
];

pub fn default_stopwords() -> BTreeSet<String> {
    DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Case-folded, whitespace-collapsed key used for entity identity.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Entity and relation type tags are lowercase and dash-free so meta-path labels stay
/// unambiguous when node types are joined with `-`.
pub fn normalize_type(tag: &str) -> String {
    let folded: String = tag
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_whitespace() || c == '-' { '_' } else { c })
        .collect();
    if folded.is_empty() {
        "unknown".to_string()
    } else {
        folded
    }
}

/// Lowercased alphanumeric runs, in order.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercased alphanumeric runs with their byte ranges in `text`.
pub fn word_token_spans(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            out.push((s, i, text[s..i].to_lowercase()));
        }
    }
    if let Some(s) = start {
        out.push((s, text.len(), text[s..].to_lowercase()));
    }
    out
}

/// Lowercase, split on non-alphanumerics, drop stop-words and tokens shorter than two chars.
pub fn normalize_tokens(text: &str, stopwords: &BTreeSet<String>) -> Vec<String> {
    word_tokens(text)
        .into_iter()
        .filter(|t| t.chars().count() >= 2 && !stopwords.contains(t))
        .collect()
}
