//! Language-model client contract, the HTTP client, and the scripted mock.
//!
//! This is the only module that talks to model endpoints. Every engine-issued request
//! uses temperature 0.

use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{join_url, JsonTransport, TransportFailure};

pub const ENV_ENDPOINT: &str = "PKG_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "PKG_LLM_API_KEY";
pub const ENV_MODEL: &str = "PKG_LLM_MODEL";
pub const ENV_TIMEOUT_MS: &str = "PKG_LLM_TIMEOUT_MS";
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("language model unavailable: {0}")]
    LlmUnavailable(String),
    #[error("language model request timed out")]
    Timeout,
    #[error("reply is neither yes nor no: {0:?}")]
    AmbiguousReply(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("language model configuration: {0}")]
    Config(String),
    #[error("mock script line {line}: {message}")]
    Script { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LlmMode {
    Complete,
    YesNo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub mode: LlmMode,
}

impl LlmRequest {
    pub fn complete(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
            mode: LlmMode::Complete,
        }
    }

    pub fn yes_no(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: 4,
            temperature: 0.0,
            mode: LlmMode::YesNo,
        }
    }
}

/// Normalizes a binary reply: the first whitespace token, lowercased and stripped of
/// punctuation, must be `yes` or `no`.
pub fn parse_yes_no(reply: &str) -> Result<bool, LlmError> {
    let first = reply
        .split_whitespace()
        .next()
        .unwrap_or("")
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect::<String>();
    match first.as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(LlmError::AmbiguousReply(reply.to_string())),
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;

    fn yes_no(&self, prompt: &str) -> Result<bool, LlmError> {
        parse_yes_no(&self.complete(&LlmRequest::yes_no(prompt))?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
}

impl LlmConfig {
    /// Reads `PKG_LLM_*`; fails with an actionable message when no endpoint is set.
    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| {
                LlmError::Config(format!(
                    "{ENV_ENDPOINT} is not set; point it at a completions server or pass a mock script"
                ))
            })?;
        let timeout_ms = match std::env::var(ENV_TIMEOUT_MS) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| LlmError::Config(format!("{ENV_TIMEOUT_MS} must be an integer, got {v:?}")))?,
            Err(_) => DEFAULT_TIMEOUT_MS,
        };
        Ok(Self {
            endpoint,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty()),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string()),
            timeout_ms,
        })
    }
}

/// Client for a `{endpoint}/completions` server; transient failures are retried once.
pub struct HttpLlm {
    transport: JsonTransport,
    url: String,
    model: String,
}

impl HttpLlm {
    pub fn new(config: &LlmConfig) -> Self {
        Self {
            transport: JsonTransport::new(Duration::from_millis(config.timeout_ms), config.api_key.clone()),
            url: join_url(&config.endpoint, "completions"),
            model: config.model.clone(),
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Ok(Self::new(&LlmConfig::from_env()?))
    }
}

fn completion_text(body: &Value) -> Option<&str> {
    body.pointer("/choices/0/text")
        .or_else(|| body.get("text"))
        .or_else(|| body.get("completion"))
        .and_then(Value::as_str)
}

impl LlmClient for HttpLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        if request.prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let body = json!({
            "max_tokens": request.max_tokens,
            "model": self.model,
            "prompt": request.prompt,
            "temperature": 0,
        });
        match self.transport.post(&self.url, &body) {
            Ok(reply) => completion_text(&reply)
                .map(str::to_string)
                .ok_or_else(|| LlmError::LlmUnavailable("response carries no completion text".into())),
            Err(TransportFailure::Timeout) => Err(LlmError::Timeout),
            Err(TransportFailure::Unavailable(m)) | Err(TransportFailure::Rejected(m)) => {
                Err(LlmError::LlmUnavailable(m))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Substring(String),
    /// Hex SHA-256 of the whole prompt.
    PromptHash(String),
}

impl Matcher {
    /// `sha256:<hex>` selects a hash match, anything else is a substring.
    pub fn parse(spec: &str) -> Self {
        match spec.strip_prefix("sha256:") {
            Some(hex) => Matcher::PromptHash(hex.trim().to_lowercase()),
            None => Matcher::Substring(spec.to_string()),
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::PromptHash(h) => prompt_hash(prompt) == *h,
        }
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A scripted reply. With several replies, successive matches walk the list and the last
/// one repeats.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRule {
    pub matcher: Matcher,
    pub replies: Vec<String>,
}

impl MockRule {
    pub fn new(matcher: &str, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::parse(matcher),
            replies: vec![reply.into()],
        }
    }

    pub fn sequence<S: Into<String>>(matcher: &str, replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            matcher: Matcher::parse(matcher),
            replies: replies.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub default_reply: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    #[serde(rename = "match")]
    matcher: Option<String>,
    reply: Option<String>,
    replies: Option<Vec<String>>,
    default: Option<String>,
}

impl MockScript {
    /// Parses JSON Lines of `{"match": ..., "reply": ...}`. A rule may give `"replies"`
    /// instead; a line `{"default": ...}` sets the reply for unmatched prompts.
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut script = MockScript {
            rules: Vec::new(),
            default_reply: String::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| LlmError::Script { line: i + 1, message };
            let parsed: ScriptLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            match parsed {
                ScriptLine {
                    matcher: None,
                    reply: None,
                    replies: None,
                    default: Some(d),
                } => script.default_reply = d,
                ScriptLine {
                    matcher: Some(m),
                    reply,
                    replies,
                    default: None,
                } => {
                    let replies = match (reply, replies) {
                        (Some(r), None) => vec![r],
                        (None, Some(rs)) if !rs.is_empty() => rs,
                        _ => return Err(err("a rule needs exactly one of \"reply\" or a non-empty \"replies\"".into())),
                    };
                    script.rules.push(MockRule {
                        matcher: Matcher::parse(&m),
                        replies,
                    });
                }
                _ => return Err(err("expected {\"match\",\"reply\"} or {\"default\"}".into())),
            }
        }
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRecord {
    pub mode: LlmMode,
    pub prompt: String,
    pub reply: String,
}

#[derive(Default)]
struct MockState {
    log: Vec<CallRecord>,
    uses: Vec<usize>,
}

/// Deterministic scripted client. The first matching rule wins; calls are serialized so
/// the log order is the call order.
pub struct MockLlm {
    script: MockScript,
    state: Mutex<MockState>,
}

impl MockLlm {
    pub fn new(script: MockScript) -> Self {
        let uses = vec![0; script.rules.len()];
        Self {
            script,
            state: Mutex::new(MockState { log: Vec::new(), uses }),
        }
    }

    pub fn with_rules(rules: Vec<MockRule>, default_reply: impl Into<String>) -> Self {
        Self::new(MockScript {
            rules,
            default_reply: default_reply.into(),
        })
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.state.lock().expect("mock state poisoned").log.clone()
    }

    pub fn call_count(&self, mode: LlmMode) -> usize {
        self.state
            .lock()
            .expect("mock state poisoned")
            .log
            .iter()
            .filter(|c| c.mode == mode)
            .count()
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        if request.prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let mut state = self.state.lock().expect("mock state poisoned");
        let reply = match self.script.rules.iter().position(|r| r.matcher.matches(&request.prompt)) {
            Some(i) => {
                let rule = &self.script.rules[i];
                let n = state.uses[i];
                state.uses[i] += 1;
                rule.replies[n.min(rule.replies.len() - 1)].clone()
            }
            None => self.script.default_reply.clone(),
        };
        state.log.push(CallRecord {
            mode: request.mode,
            prompt: request.prompt.clone(),
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::test_server;
    use std::sync::atomic::Ordering;

    #[test]
    fn yes_no_normalization() {
        assert_eq!(parse_yes_no("No."), Ok(false));
        assert_eq!(parse_yes_no("  YES, definitely"), Ok(true));
        assert!(matches!(parse_yes_no("maybe"), Err(LlmError::AmbiguousReply(_))));
        assert!(matches!(parse_yes_no(""), Err(LlmError::AmbiguousReply(_))));
    }

    #[test]
    fn mock_first_match_wins_and_default_applies() {
        let mock = MockLlm::with_rules(
            vec![
                MockRule::new("Extract entities", "(\"entity\"<|>A<|>person<|>x)"),
                MockRule::new("Extract", "never"),
            ],
            "fallback",
        );
        let r = mock.complete(&LlmRequest::complete("Extract entities from: ...")).unwrap();
        assert!(r.starts_with("(\"entity\""));
        assert_eq!(mock.complete(&LlmRequest::complete("other")).unwrap(), "fallback");
        assert_eq!(mock.calls().len(), 2);
    }

    #[test]
    fn mock_hash_matcher_and_sequences() {
        let prompt = "exact prompt";
        let mock = MockLlm::with_rules(
            vec![
                MockRule::new(&format!("sha256:{}", prompt_hash(prompt)), "hashed"),
                MockRule::sequence("seq", ["one", "two"]),
            ],
            "",
        );
        assert_eq!(mock.complete(&LlmRequest::complete(prompt)).unwrap(), "hashed");
        let replies: Vec<String> = (0..3)
            .map(|_| mock.complete(&LlmRequest::complete("seq")).unwrap())
            .collect();
        assert_eq!(replies, ["one", "two", "two"]);
    }

    #[test]
    fn mock_is_deterministic() {
        let script = MockScript::parse(
            "{\"match\":\"a\",\"replies\":[\"1\",\"2\"]}\n{\"default\":\"d\"}\n{\"match\":\"b\",\"reply\":\"B\"}\n",
        )
        .unwrap();
        let run = || {
            let m = MockLlm::new(script.clone());
            for p in ["a", "b", "a", "c", "a"] {
                m.complete(&LlmRequest::complete(p)).unwrap();
            }
            m.calls()
        };
        let first = run();
        assert_eq!(first, run());
        let replies: Vec<&str> = first.iter().map(|c| c.reply.as_str()).collect();
        assert_eq!(replies, ["1", "B", "2", "d", "2"]);
    }

    #[test]
    fn mock_yes_no_through_trait() {
        let mock = MockLlm::with_rules(vec![MockRule::new("real", "No.")], "maybe");
        assert_eq!(mock.yes_no("is this real?"), Ok(false));
        assert!(matches!(mock.yes_no("other"), Err(LlmError::AmbiguousReply(_))));
        assert_eq!(mock.call_count(LlmMode::YesNo), 2);
    }

    #[test]
    fn bad_script_lines_are_reported() {
        assert!(matches!(MockScript::parse("{\"match\":\"a\"}"), Err(LlmError::Script { line: 1, .. })));
        assert!(matches!(MockScript::parse("\n{oops"), Err(LlmError::Script { line: 2, .. })));
    }

    fn config(url: &str) -> LlmConfig {
        LlmConfig {
            endpoint: url.to_string(),
            api_key: Some("k".into()),
            model: "m".into(),
            timeout_ms: 5_000,
        }
    }

    #[test]
    fn http_client_reads_completion() {
        let server = test_server::spawn(vec![(200, r#"{"choices":[{"text":"yes"}]}"#.into())]);
        let client = HttpLlm::new(&config(&server.url));
        assert_eq!(client.yes_no("q?"), Ok(true));
    }

    #[test]
    fn http_endpoint_down_fails_after_two_attempts() {
        let server = test_server::spawn(vec![(503, "{}".into())]);
        let client = HttpLlm::new(&config(&server.url));
        assert!(matches!(
            client.complete(&LlmRequest::complete("hi")),
            Err(LlmError::LlmUnavailable(_))
        ));
        assert_eq!(server.hits.load(Ordering::SeqCst), 2);

        // Nothing listening at all.
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let dead = format!("http://{}", listener.local_addr().unwrap());
        drop(listener);
        assert!(HttpLlm::new(&config(&dead)).complete(&LlmRequest::complete("hi")).is_err());
    }
}
