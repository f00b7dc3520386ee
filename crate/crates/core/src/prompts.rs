//! Prompt templates. Defaults are compiled in from `prompts/`; a directory holding files of
//! the same names overrides them one by one.

use std::fs;
use std::io;
use std::path::Path;

pub const EXTRACT: &str = include_str!("../prompts/extract.txt");
pub const GLEAN_CHECK: &str = include_str!("../prompts/glean_check.txt");
pub const GLEAN_CONTINUE: &str = include_str!("../prompts/glean_continue.txt");
pub const VERIFY_ENTITY: &str = include_str!("../prompts/verify_entity.txt");
pub const RERANK: &str = include_str!("../prompts/rerank.txt");
pub const HYPOTHETICAL: &str = include_str!("../prompts/hypothetical.txt");
pub const EXAMPLES: &str = include_str!("../prompts/examples.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptConfig {
    pub extract: String,
    pub glean_check: String,
    pub glean_continue: String,
    pub verify_entity: String,
    pub rerank: String,
    pub hypothetical: String,
    /// Few-shot block substituted for `{examples}`; empty disables few-shot prompting.
    pub examples: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            extract: EXTRACT.to_string(),
            glean_check: GLEAN_CHECK.to_string(),
            glean_continue: GLEAN_CONTINUE.to_string(),
            verify_entity: VERIFY_ENTITY.to_string(),
            rerank: RERANK.to_string(),
            hypothetical: HYPOTHETICAL.to_string(),
            examples: EXAMPLES.to_string(),
        }
    }
}

impl PromptConfig {
    pub fn from_dir(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref();
        let mut config = Self::default();
        let slots: [(&str, &mut String); 7] = [
            ("extract.txt", &mut config.extract),
            ("glean_check.txt", &mut config.glean_check),
            ("glean_continue.txt", &mut config.glean_continue),
            ("verify_entity.txt", &mut config.verify_entity),
            ("rerank.txt", &mut config.rerank),
            ("hypothetical.txt", &mut config.hypothetical),
            ("examples.txt", &mut config.examples),
        ];
        for (name, slot) in slots {
            let path = dir.join(name);
            if path.is_file() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(config)
    }
}

/// Substitutes `{key}` placeholders in one pass, so substituted text is never re-scanned.
/// Unknown placeholders are left as they are.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let key = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
