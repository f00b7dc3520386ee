use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {message}")]
    BadLine { path: String, line: usize, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateDoc(String),
    #[error("corpus at {0} holds no documents")]
    Empty(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        Self { documents }
    }

    pub fn total_chars(&self) -> usize {
        self.documents.iter().map(|d| d.text.chars().count()).sum()
    }

    /// Loads a directory of `.txt` files (doc id = file name, sorted), a JSON-Lines file
    /// of `{"doc_id", "text"}` records, or a single text file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let documents = if path.is_dir() {
            let mut files: Vec<_> = fs::read_dir(path)
                .map_err(io)?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
                .collect();
            files.sort();
            files
                .into_iter()
                .map(|p| {
                    let text = fs::read_to_string(&p).map_err(|source| CorpusError::Io {
                        path: p.display().to_string(),
                        source,
                    })?;
                    let doc_id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok(Document { doc_id, text })
                })
                .collect::<Result<Vec<_>, CorpusError>>()?
        } else if path.extension().is_some_and(|x| x == "jsonl" || x == "json") {
            let text = fs::read_to_string(path).map_err(io)?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str::<Document>(l).map_err(|e| CorpusError::BadLine {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            let text = fs::read_to_string(path).map_err(io)?;
            let doc_id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            vec![Document { doc_id, text }]
        };
        if documents.is_empty() {
            return Err(CorpusError::Empty(path.display().to_string()));
        }
        let mut seen = BTreeSet::new();
        for d in &documents {
            if !seen.insert(d.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDoc(d.doc_id.clone()));
            }
        }
        Ok(Self { documents })
    }

    /// Writes the corpus as JSON Lines.
    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = String::new();
        for d in &self.documents {
            out.push_str(&serde_json::json!({"doc_id": d.doc_id, "text": d.text}).to_string());
            out.push('\n');
        }
        fs::write(path, out)
    }
}
