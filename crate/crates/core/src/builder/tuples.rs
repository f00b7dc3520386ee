//! The delimited tuple grammar exchanged with language models.
//!
//! Records are separated by `##`; a record is `("entity"<|>name<|>type<|>description)` or
//! `("relation"<|>src<|>dst<|>relation_type<|>description[<|>temporal])`. Parentheses and
//! quotes around the kind are optional. Malformed records are skipped and counted.

pub const RECORD_SEP: &str = "##";
pub const FIELD_SEP: &str = "<|>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TupleRecord {
    Entity {
        name: String,
        entity_type: String,
        description: String,
    },
    Relation {
        src: String,
        dst: String,
        relation_type: String,
        description: String,
        temporal: Option<String>,
    },
}

impl TupleRecord {
    /// Canonical serialization, inverse of [`parse_delimited_tuples`] for clean fields.
    pub fn to_tuple(&self) -> String {
        match self {
            TupleRecord::Entity {
                name,
                entity_type,
                description,
            } => format!("(\"entity\"{FIELD_SEP}{name}{FIELD_SEP}{entity_type}{FIELD_SEP}{description})"),
            TupleRecord::Relation {
                src,
                dst,
                relation_type,
                description,
                temporal,
            } => {
                let mut s = format!(
                    "(\"relation\"{FIELD_SEP}{src}{FIELD_SEP}{dst}{FIELD_SEP}{relation_type}{FIELD_SEP}{description}"
                );
                if let Some(t) = temporal {
                    s.push_str(FIELD_SEP);
                    s.push_str(t);
                }
                s.push(')');
                s
            }
        }
    }
}

pub fn format_tuples(records: &[TupleRecord]) -> String {
    records.iter().map(TupleRecord::to_tuple).collect::<Vec<_>>().join(RECORD_SEP)
}

fn parse_record(raw: &str) -> Option<TupleRecord> {
    let mut body = raw.trim();
    body = body.strip_prefix('(').unwrap_or(body);
    body = body.strip_suffix(')').unwrap_or(body);
    let fields: Vec<&str> = body.split(FIELD_SEP).map(str::trim).collect();
    let kind = fields[0].trim_matches(|c| c == '"' || c == '\'').to_lowercase();
    let nonempty = |s: &&str| !s.is_empty();
    match (kind.as_str(), fields.len()) {
        ("entity", 4) if nonempty(&fields[1]) && nonempty(&fields[2]) => Some(TupleRecord::Entity {
            name: fields[1].to_string(),
            entity_type: fields[2].to_string(),
            description: fields[3].to_string(),
        }),
        ("relation", 5 | 6) if fields[1..4].iter().all(nonempty) => Some(TupleRecord::Relation {
            src: fields[1].to_string(),
            dst: fields[2].to_string(),
            relation_type: fields[3].to_string(),
            description: fields[4].to_string(),
            temporal: fields.get(5).filter(|s| !s.is_empty()).map(|s| s.to_string()),
        }),
        _ => None,
    }
}

/// Parses model output into records; returns the records and the number skipped.
pub fn parse_delimited_tuples(output: &str) -> (Vec<TupleRecord>, usize) {
    let mut records = Vec::new();
    let mut skipped = 0;
    for raw in output.split(RECORD_SEP) {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("<|COMPLETE|>") {
            continue;
        }
        match parse_record(trimmed) {
            Some(r) => records.push(r),
            None => skipped += 1,
        }
    }
    (records, skipped)
}
