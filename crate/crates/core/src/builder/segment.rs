//! Sentence splitting and chunk packing. All offsets are in chars.

use crate::graph::Span;

/// Abbreviations whose trailing period never ends a sentence (compared case-insensitively).
pub const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "vs", "e.g", "i.e", "fig", "figs", "eq", "no", "cf",
    "al", "etc", "inc", "ltd", "co", "corp",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub span: Span,
    pub text: String,
    /// Leading chars shared with the previous segment.
    pub overlap: usize,
}

/// Char-indexed view of a document with byte offsets for slicing.
pub(crate) struct CharText<'a> {
    pub(crate) text: &'a str,
    pub(crate) chars: Vec<char>,
    /// `byte_at[i]` is the byte offset of char `i`; one extra entry for the end.
    pub(crate) byte_at: Vec<usize>,
}

impl<'a> CharText<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        let mut chars = Vec::with_capacity(text.len());
        let mut byte_at = Vec::with_capacity(text.len() + 1);
        for (b, c) in text.char_indices() {
            chars.push(c);
            byte_at.push(b);
        }
        byte_at.push(text.len());
        Self { text, chars, byte_at }
    }

    pub(crate) fn slice(&self, span: Span) -> &'a str {
        &self.text[self.byte_at[span.start]..self.byte_at[span.end]]
    }

    /// Char index of a byte offset that lies on a char boundary.
    pub(crate) fn char_of_byte(&self, byte: usize) -> usize {
        self.byte_at.partition_point(|&b| b < byte)
    }
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

fn is_abbreviation(chars: &[char], dot: usize) -> bool {
    let mut start = dot;
    while start > 0 && (chars[start - 1].is_alphanumeric() || chars[start - 1] == '.') {
        start -= 1;
    }
    if start == dot {
        return false;
    }
    let word: String = chars[start..dot].iter().collect::<String>().to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// Splits into sentences that tile the text: each sentence carries its trailing whitespace.
///
/// A sentence ends at `.`, `!` or `?` (plus closing quotes or brackets) followed by end of
/// text, or by whitespace and then an uppercase letter, digit or opening quote. A period
/// after a listed abbreviation does not end a sentence.
pub fn split_sentences(text: &str) -> Vec<Span> {
    sentence_spans(&CharText::new(text))
}

pub(crate) fn sentence_spans(doc: &CharText<'_>) -> Vec<Span> {
    let chars = &doc.chars;
    let n = chars.len();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < n && (matches!(chars[end], '.' | '!' | '?') || is_closer(chars[end])) {
            end += 1;
        }
        let mut next = end;
        while next < n && chars[next].is_whitespace() {
            next += 1;
        }
        let boundary = if next == n {
            true
        } else if next == end {
            false
        } else {
            let mut probe = next;
            while probe < n && is_opener(chars[probe]) {
                probe += 1;
            }
            probe < n && (chars[probe].is_uppercase() || chars[probe].is_ascii_digit())
        };
        if boundary && !(c == '.' && is_abbreviation(chars, i)) {
            spans.push(Span::new(start, next));
            start = next;
        }
        i = end.max(i + 1);
    }
    if start < n {
        spans.push(Span::new(start, n));
    }
    spans
}

/// Splits a span longer than `target` at whitespace; words longer than `target` are cut.
fn split_long(doc: &CharText<'_>, span: Span, target: usize) -> Vec<Span> {
    if span.len() <= target {
        return vec![span];
    }
    // Tokens: a run of non-whitespace plus its trailing whitespace.
    let chars = &doc.chars;
    let mut tokens = Vec::new();
    let mut t = span.start;
    while t < span.end {
        let mut e = t;
        while e < span.end && chars[e].is_whitespace() {
            e += 1;
        }
        while e < span.end && !chars[e].is_whitespace() {
            e += 1;
        }
        let word_end = e;
        while e < span.end && chars[e].is_whitespace() {
            e += 1;
        }
        let mut s = t;
        while e - s > target {
            // The remainder keeps at least one word char so no piece is blank.
            let cut = (s + target).min(word_end.saturating_sub(1)).max(s + 1);
            tokens.push(Span::new(s, cut));
            s = cut;
        }
        tokens.push(Span::new(s, e));
        t = e;
    }
    let mut pieces: Vec<Span> = Vec::new();
    for tok in tokens {
        match pieces.last_mut() {
            Some(last) if tok.end - last.start <= target => last.end = tok.end,
            _ => pieces.push(tok),
        }
    }
    pieces
}

/// Packs sentences greedily into chunks of at most `target` chars, including the
/// `overlap` chars repeated from the previous chunk. The overlap shrinks when a chunk
/// would otherwise exceed `target` and is moved forward to a word start.
///
/// [`reconstruct`] returns the input whenever no whitespace run reaches `target` chars;
/// longer blank runs cannot be carried by non-blank chunks and are dropped.
pub fn segment(text: &str, target: usize, overlap: usize) -> Vec<Segment> {
    segment_doc(&CharText::new(text), target, overlap)
}

pub(crate) fn segment_doc(doc: &CharText<'_>, target: usize, overlap: usize) -> Vec<Segment> {
    let target = target.max(1);
    let overlap = overlap.min(target - 1);
    let pieces: Vec<Span> = sentence_spans(doc)
        .into_iter()
        .flat_map(|s| split_long(doc, s, target))
        .collect();
    let mut out: Vec<Segment> = Vec::new();
    let mut i = 0;
    let mut prev_start = 0;
    while i < pieces.len() {
        let new_start = pieces[i].start;
        let wanted_overlap = if out.is_empty() { 0 } else { overlap };
        let mut end = pieces[i].end;
        i += 1;
        while i < pieces.len() && pieces[i].end - new_start + wanted_overlap <= target {
            end = pieces[i].end;
            i += 1;
        }
        let room = target - (end - new_start).min(target);
        let mut ov = wanted_overlap.min(room).min(new_start - prev_start);
        // Start the overlap at a word boundary.
        while ov > 0 {
            let s = new_start - ov;
            if s == 0 || doc.chars[s - 1].is_whitespace() {
                break;
            }
            ov -= 1;
        }
        let span = Span::new(new_start - ov, end);
        let text = doc.slice(span);
        if text.trim().is_empty() {
            continue;
        }
        prev_start = span.start;
        out.push(Segment {
            span,
            text: text.to_string(),
            overlap: ov,
        });
    }
    out
}

/// Concatenation of the non-overlapping parts of `segments`.
pub fn reconstruct(segments: &[Segment]) -> String {
    segments
        .iter()
        .map(|s| s.text.chars().skip(s.overlap).collect::<String>())
        .collect()
}
