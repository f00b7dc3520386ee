//! Pattern rules for entities and relations.

use std::collections::BTreeSet;

use regex::Regex;
use thiserror::Error;

use super::segment::{sentence_spans, CharText};
use crate::graph::Span;
use crate::text::{normalize_name, normalize_type, DEFAULT_STOPWORDS};

pub const RULE_CONFIDENCE: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("rule {rule_id}: pattern does not compile: {message}")]
    BadPattern { rule_id: String, message: String },
    #[error("rule {rule_id}: missing named group {group:?}")]
    MissingGroup { rule_id: String, group: &'static str },
    #[error("rule {rule_id}: confidence {confidence} outside [0, 1]")]
    BadConfidence { rule_id: String, confidence: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Entity,
    Relation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionRule {
    pub rule_id: String,
    pub kind: RuleKind,
    /// Entity rules bind `name`; relation rules bind `src` and `dst`.
    pub pattern: String,
    /// Entity type or relation type emitted.
    pub emits: String,
    /// Endpoint types of relation rules.
    pub src_type: Option<String>,
    pub dst_type: Option<String>,
    pub priority: i32,
    pub confidence: f64,
    /// Single-word matches at a sentence start are kept only if the same surface also
    /// occurs elsewhere in a non-initial position.
    pub skip_sentence_initial: bool,
    /// Copy the `dst` surface into the relation's temporal field.
    pub dst_is_temporal: bool,
}

impl ExtractionRule {
    pub fn entity(rule_id: &str, pattern: &str, entity_type: &str, priority: i32) -> Self {
        Self {
            rule_id: rule_id.into(),
            kind: RuleKind::Entity,
            pattern: pattern.into(),
            emits: entity_type.into(),
            src_type: None,
            dst_type: None,
            priority,
            confidence: RULE_CONFIDENCE,
            skip_sentence_initial: false,
            dst_is_temporal: false,
        }
    }

    pub fn relation(rule_id: &str, pattern: &str, relation_type: &str, src_type: &str, dst_type: &str) -> Self {
        Self {
            rule_id: rule_id.into(),
            kind: RuleKind::Relation,
            pattern: pattern.into(),
            emits: relation_type.into(),
            src_type: Some(src_type.into()),
            dst_type: Some(dst_type.into()),
            priority: 0,
            confidence: RULE_CONFIDENCE,
            skip_sentence_initial: false,
            dst_is_temporal: false,
        }
    }
}

const NAME: &str = r"[A-Z][\w'&-]*(?:[ \t]+(?:of[ \t]+)?[A-Z][\w'&-]*)*";

/// Built-in rules: ISO and DD/MM/YYYY dates, quoted titles, capitalized sequences, and a
/// few typed verb patterns.
pub fn default_rules() -> Vec<ExtractionRule> {
    let rel = |id: &str, verbs: &str, t: &str, s: &str, d: &str| {
        ExtractionRule::relation(id, &format!(r"(?P<src>{NAME})[ \t]+{verbs}[ \t]+(?P<dst>{NAME})"), t, s, d)
    };
    let mut capitalized = ExtractionRule::entity("capitalized", &format!(r"\b(?P<name>{NAME})"), "named_entity", 0);
    capitalized.skip_sentence_initial = true;
    let mut dated = ExtractionRule::relation(
        "dated",
        &format!(r"(?P<src>{NAME})[ \t]+(?:opened|launched|started|was founded|was established)[ \t]+on[ \t]+(?P<dst>\d{{4}}-\d{{2}}-\d{{2}})"),
        "dated",
        "organization",
        "date",
    );
    dated.dst_is_temporal = true;
    vec![
        ExtractionRule::entity("iso_date", r"\b(?P<name>\d{4}-\d{2}-\d{2})\b", "date", 10),
        ExtractionRule::entity("dmy_date", r"\b(?P<name>\d{2}/\d{2}/\d{4})\b", "date", 10),
        ExtractionRule::entity("quoted_title", "[\"\u{201c}](?P<name>[^\"\u{201c}\u{201d}\\n]{2,80})[\"\u{201d}]", "work", 5),
        capitalized,
        rel("works_at", r"(?:works|worked|is working|was working)[ \t]+(?:at|for)", "works_at", "person", "organization"),
        rel(
            "located_in",
            r"(?:is|was)[ \t]+(?:based|located|headquartered)[ \t]+in",
            "located_in",
            "organization",
            "location",
        ),
        rel("founded", r"(?:founded|co-founded|established)", "founded", "person", "organization"),
        rel(
            "collaborates_with",
            r"(?:collaborates|collaborated|works|worked|is working)[ \t]+with",
            "collaborates_with",
            "person",
            "person",
        ),
        rel("leads", r"(?:leads|led|directs|directed|manages|managed)(?:[ \t]+the)?", "leads", "person", "project"),
        dated,
    ]
}

#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule: ExtractionRule,
    regex: Regex,
}

/// A validated, compiled rule list ordered by descending priority, then rule id.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
    stopwords: BTreeSet<String>,
}

impl RuleSet {
    pub fn new(rules: &[ExtractionRule]) -> Result<Self, RuleError> {
        let mut compiled = rules
            .iter()
            .map(|rule| {
                let regex = Regex::new(&rule.pattern).map_err(|e| RuleError::BadPattern {
                    rule_id: rule.rule_id.clone(),
                    message: e.to_string(),
                })?;
                let names: BTreeSet<&str> = regex.capture_names().flatten().collect();
                let required: &[&'static str] = match rule.kind {
                    RuleKind::Entity => &["name"],
                    RuleKind::Relation => &["src", "dst"],
                };
                if let Some(group) = required.iter().find(|g| !names.contains(**g)) {
                    return Err(RuleError::MissingGroup {
                        rule_id: rule.rule_id.clone(),
                        group,
                    });
                }
                if !(0.0..=1.0).contains(&rule.confidence) {
                    return Err(RuleError::BadConfidence {
                        rule_id: rule.rule_id.clone(),
                        confidence: rule.confidence,
                    });
                }
                Ok(CompiledRule {
                    rule: rule.clone(),
                    regex,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        compiled.sort_by(|a, b| b.rule.priority.cmp(&a.rule.priority).then_with(|| a.rule.rule_id.cmp(&b.rule.rule_id)));
        Ok(Self {
            rules: compiled,
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Replaces the stop-words stripped from the front of capitalized matches.
    pub fn with_stopwords(mut self, stopwords: BTreeSet<String>) -> Self {
        self.stopwords = stopwords;
        self
    }

    pub fn defaults() -> Self {
        Self::new(&default_rules()).expect("built-in rules are valid")
    }

    pub fn rules(&self) -> impl Iterator<Item = &ExtractionRule> {
        self.rules.iter().map(|c| &c.rule)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityMention {
    pub rule_id: String,
    pub name: String,
    pub entity_type: String,
    pub confidence: f64,
    /// Char span within the scanned text.
    pub span: Span,
    pub sentence: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationMention {
    pub rule_id: String,
    pub src: String,
    pub src_type: String,
    pub dst: String,
    pub dst_type: String,
    pub relation_type: String,
    pub confidence: f64,
    pub temporal: Option<String>,
    pub span: Span,
    pub sentence: usize,
}

/// Drops leading stop-words ("The Acme Labs" -> "Acme Labs"); returns the byte offset
/// of the kept part within `surface`.
fn strip_leading_stopwords<'a>(surface: &'a str, stopwords: &BTreeSet<String>) -> Option<(usize, &'a str)> {
    let mut offset = 0;
    let mut rest = surface;
    loop {
        let word_end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..word_end];
        if word.is_empty() {
            return None;
        }
        if !stopwords.contains(&word.to_lowercase()) {
            return Some((offset, rest.trim_end()));
        }
        let skip = rest[word_end..].len() - rest[word_end..].trim_start().len();
        offset += word_end + skip;
        rest = &rest[word_end + skip..];
    }
}

struct Scan<'a> {
    doc: CharText<'a>,
    sentences: Vec<Span>,
}

impl<'a> Scan<'a> {
    fn new(text: &'a str) -> Self {
        let doc = CharText::new(text);
        let sentences = sentence_spans(&doc);
        Self { doc, sentences }
    }

    fn char_span(&self, bytes: (usize, usize)) -> Span {
        Span::new(self.doc.char_of_byte(bytes.0), self.doc.char_of_byte(bytes.1))
    }

    fn sentence_of(&self, char_pos: usize) -> usize {
        self.sentences.partition_point(|s| s.end <= char_pos)
    }

    /// True when only whitespace or opening punctuation precedes `char_pos` in its sentence.
    fn is_sentence_initial(&self, char_pos: usize) -> bool {
        let Some(sentence) = self.sentences.get(self.sentence_of(char_pos)) else {
            return false;
        };
        self.doc.chars[sentence.start..char_pos]
            .iter()
            .all(|c| c.is_whitespace() || matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}'))
    }
}

/// Runs the entity rules over `text`. Every match is emitted, including overlapping
/// matches of different rules; deduplication happens at merge time.
pub fn extract_rule_entities(text: &str, rules: &RuleSet) -> Vec<EntityMention> {
    let scan = Scan::new(text);
    let mut out = Vec::new();
    for compiled in rules.rules.iter().filter(|c| c.rule.kind == RuleKind::Entity) {
        let rule = &compiled.rule;
        let mut found: Vec<(usize, usize, bool)> = Vec::new();
        for caps in compiled.regex.captures_iter(text) {
            let Some(m) = caps.name("name") else { continue };
            let (start, surface) = if rule.skip_sentence_initial {
                match strip_leading_stopwords(m.as_str(), &rules.stopwords) {
                    Some((offset, kept)) => (m.start() + offset, kept),
                    None => continue,
                }
            } else {
                (m.start(), m.as_str().trim())
            };
            if surface.is_empty() {
                continue;
            }
            let single_initial = rule.skip_sentence_initial
                && !surface.contains(char::is_whitespace)
                && scan.is_sentence_initial(scan.doc.char_of_byte(start));
            found.push((start, start + surface.len(), single_initial));
        }
        let non_initial: BTreeSet<&str> = found
            .iter()
            .filter(|(_, _, initial)| !initial)
            .map(|(s, e, _)| &text[*s..*e])
            .collect();
        for (s, e, initial) in found {
            let surface = &text[s..e];
            if initial && !non_initial.contains(surface) {
                continue;
            }
            let span = scan.char_span((s, e));
            out.push(EntityMention {
                rule_id: rule.rule_id.clone(),
                name: surface.to_string(),
                entity_type: normalize_type(&rule.emits),
                confidence: rule.confidence,
                span,
                sentence: scan.sentence_of(span.start),
            });
        }
    }
    out
}

/// Runs the relation rules over `text`.
pub fn extract_rule_relations(text: &str, rules: &RuleSet) -> Vec<RelationMention> {
    let scan = Scan::new(text);
    let mut out = Vec::new();
    for compiled in rules.rules.iter().filter(|c| c.rule.kind == RuleKind::Relation) {
        let rule = &compiled.rule;
        for caps in compiled.regex.captures_iter(text) {
            let (Some(src), Some(dst), Some(whole)) = (caps.name("src"), caps.name("dst"), caps.get(0)) else {
                continue;
            };
            let Some((_, src_name)) = strip_leading_stopwords(src.as_str(), &rules.stopwords) else {
                continue;
            };
            let Some((_, dst_name)) = strip_leading_stopwords(dst.as_str(), &rules.stopwords) else {
                continue;
            };
            if normalize_name(src_name).is_empty() || normalize_name(dst_name).is_empty() {
                continue;
            }
            let span = scan.char_span((whole.start(), whole.end()));
            out.push(RelationMention {
                rule_id: rule.rule_id.clone(),
                src: src_name.to_string(),
                src_type: normalize_type(rule.src_type.as_deref().unwrap_or("named_entity")),
                dst: dst_name.to_string(),
                dst_type: normalize_type(rule.dst_type.as_deref().unwrap_or("named_entity")),
                relation_type: normalize_type(&rule.emits),
                confidence: rule.confidence,
                temporal: rule.dst_is_temporal.then(|| dst_name.to_string()),
                span,
                sentence: scan.sentence_of(span.start),
            });
        }
    }
    out
}
