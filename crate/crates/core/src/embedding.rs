//! Text embedding: the provider contract, the deterministic `hash-v1` embedder, an HTTP
//! provider, cosine similarity, and exact top-k search.

use std::borrow::Borrow;
use std::cmp::Ordering;
use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::http::{join_url, JsonTransport, TransportFailure};
use crate::par::*;
use crate::text::word_tokens;

pub const HASH_PROVIDER_ID: &str = "hash-v1";
pub const HTTP_PROVIDER_ID: &str = "http";
pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("graph was built with provider {graph_provider:?} (dim {graph_dim}), active provider is {active_provider:?} (dim {active_dim})")]
    ProviderMismatch {
        graph_provider: String,
        graph_dim: usize,
        active_provider: String,
        active_dim: usize,
    },
    #[error("invalid embedding provider config: {0}")]
    Config(String),
}

/// Dense vector with a cached L2 norm.
#[derive(Debug, Clone)]
pub struct Vector {
    values: Vec<f64>,
    norm: f64,
}

impl PartialEq for Vector {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

impl Vector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { values, norm }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }

    pub fn normalized(&self) -> Self {
        if self.is_zero() {
            self.clone()
        } else {
            self.scaled(1.0 / self.norm)
        }
    }

    /// Non-zero entries as `(index, value)` pairs; the on-disk representation.
    pub fn to_sparse(&self) -> Vec<(u32, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .collect()
    }

    pub fn from_sparse(dim: usize, entries: &[(u32, f64)]) -> Option<Self> {
        let mut values = vec![0.0; dim];
        for &(i, v) in entries {
            *values.get_mut(i as usize)? = v;
        }
        Some(Self::new(values))
    }

    fn dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Cosine similarity in `[-1, 1]`; a zero vector scores 0 against anything.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(cosine_same_dim(a, b))
}

fn cosine_same_dim(a: &Vector, b: &Vector) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 0.0;
    }
    (a.dot(b) / (a.norm * b.norm)).clamp(-1.0, 1.0)
}

/// Descending score, then ascending id.
pub(crate) fn rank_order<I: Ord>(a: &(I, f64), b: &(I, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Exact top-`k` candidates by cosine similarity to `query`, ties broken by ascending id.
///
/// Candidates whose dimension differs from the query are ignored.
pub fn top_k<I, V>(query: &Vector, candidates: &[(I, V)], k: usize) -> Vec<(I, f64)>
where
    I: Ord + Clone + Send + Sync,
    V: Borrow<Vector> + Sync,
{
    if k == 0 {
        return Vec::new();
    }
    let mut scored: Vec<(I, f64)> = maybe_par_iter!(candidates)
        .filter_map(|(id, v)| {
            let v = v.borrow();
            (v.dim() == query.dim()).then(|| (id.clone(), cosine_same_dim(query, v)))
        })
        .collect();
    select_top(&mut scored, k);
    scored
}

/// Keeps the best `k` entries of `scored` under [`rank_order`], sorted.
pub(crate) fn select_top<I: Ord>(scored: &mut Vec<(I, f64)>, k: usize) {
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
}

/// Text embedding provider. Implementations must tolerate concurrent calls.
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vector, EmbedError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        maybe_par_iter!(texts).map(|t| self.embed(t)).collect()
    }
}

/// Signed feature hashing over word unigrams, word bigrams and character trigrams,
/// L2-normalized. Stateless and platform independent.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn add_feature(&self, acc: &mut [f64], tag: u8, feature: &str) {
        let mut hasher = FnvHasher::default();
        hasher.write(&[tag, 0x1f]);
        hasher.write(feature.as_bytes());
        let h = hasher.finish();
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        HASH_PROVIDER_ID
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let tokens = word_tokens(text);
        let mut acc = vec![0.0; self.dim];
        for token in &tokens {
            self.add_feature(&mut acc, b'u', token);
            let padded: Vec<char> = std::iter::once('<')
                .chain(token.chars())
                .chain(std::iter::once('>'))
                .collect();
            for tri in padded.windows(3) {
                let s: String = tri.iter().collect();
                self.add_feature(&mut acc, b'c', &s);
            }
        }
        for pair in tokens.windows(2) {
            self.add_feature(&mut acc, b'b', &format!("{} {}", pair[0], pair[1]));
        }
        Ok(Vector::new(acc).normalized())
    }
}

/// Remote provider: `POST {endpoint}/embed` with `{"model", "input": [...]}`, expecting
/// `{"data": [{"embedding": [...]}, ...]}`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    transport: JsonTransport,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            dim,
            transport: JsonTransport::new(timeout, None),
        }
    }

    fn request(&self, inputs: &[&str]) -> Result<Vec<Vector>, EmbedError> {
        let body = json!({ "model": self.model, "input": inputs });
        let reply = self
            .transport
            .post(&join_url(&self.endpoint, "embed"), &body)
            .map_err(|f| match f {
                TransportFailure::Timeout => EmbedError::ProviderUnavailable("timeout".into()),
                TransportFailure::Unavailable(m) | TransportFailure::Rejected(m) => {
                    EmbedError::ProviderUnavailable(m)
                }
            })?;
        let data = reply
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::ProviderUnavailable("response lacks `data`".into()))?;
        if data.len() != inputs.len() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                let values: Vec<f64> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| EmbedError::ProviderUnavailable("item lacks `embedding`".into()))?
                    .iter()
                    .map(|v| v.as_f64().unwrap_or(0.0))
                    .collect();
                if values.len() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        left: values.len(),
                        right: self.dim,
                    });
                }
                Ok(Vector::new(values))
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> &str {
        HTTP_PROVIDER_ID
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        Ok(self.request(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(64) {
            let refs: Vec<&str> = batch.iter().map(String::as_str).collect();
            out.extend(self.request(&refs)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub provider_id: String,
    pub dim: usize,
    #[serde(default)]
    pub http_endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            provider_id: HASH_PROVIDER_ID.into(),
            dim: DEFAULT_DIM,
            http_endpoint: None,
            model: None,
            timeout_ms: default_timeout_ms(),
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        match self.provider_id.as_str() {
            HASH_PROVIDER_ID => Ok(Box::new(HashEmbedder::new(self.dim))),
            HTTP_PROVIDER_ID => {
                let endpoint = self
                    .http_endpoint
                    .clone()
                    .ok_or_else(|| EmbedError::Config("http provider needs an endpoint".into()))?;
                Ok(Box::new(HttpEmbedder::new(
                    endpoint,
                    self.model.clone().unwrap_or_default(),
                    self.dim,
                    Duration::from_millis(self.timeout_ms),
                )))
            }
            other => Err(EmbedError::Config(format!("unknown provider {other:?}"))),
        }
    }
}

/// A graph must be queried with the provider (and dimension) it was built with.
pub fn check_compatible(
    graph_provider: &str,
    graph_dim: usize,
    active: &dyn EmbeddingProvider,
) -> Result<(), EmbedError> {
    if graph_provider != active.id() || graph_dim != active.dim() {
        return Err(EmbedError::ProviderMismatch {
            graph_provider: graph_provider.to_string(),
            graph_dim,
            active_provider: active.id().to_string(),
            active_dim: active.dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::test_server;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(values: &[f64]) -> Vector {
        Vector::new(values.to_vec())
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap(), -1.0);
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(EmbedError::DimMismatch { .. })
        ));
    }

    #[test]
    fn hash_embedding_is_deterministic_and_normalized() {
        let e = HashEmbedder::default();
        let a = e.embed("Solar power plant in Quorvale").unwrap();
        let b = e.embed("Solar power plant in Quorvale").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 256);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(e.embed(""), Err(EmbedError::EmptyText));
        assert_eq!(e.embed("   "), Err(EmbedError::EmptyText));
        // No alphanumeric features: the zero vector.
        assert!(e.embed("?!").unwrap().is_zero());
    }

    #[test]
    fn shared_tokens_order_similarity() {
        let e = HashEmbedder::default();
        let q = e.embed("solar power plant").unwrap();
        let near = cosine(&q, &e.embed("solar energy station").unwrap()).unwrap();
        let far = cosine(&q, &e.embed("medieval poetry").unwrap()).unwrap();
        assert!(near > far, "near={near} far={far}");
    }

    #[test]
    fn top_k_ties_break_by_id() {
        let same = v(&[1.0, 1.0]);
        let cands = vec![("b", same.clone()), ("a", same.clone()), ("c", v(&[1.0, -1.0]))];
        let got = top_k(&v(&[1.0, 1.0]), &cands, 10);
        let ids: Vec<_> = got.iter().map(|(id, _)| *id).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert!(top_k(&v(&[1.0, 1.0]), &cands, 0).is_empty());
    }

    #[test]
    fn top_k_matches_full_sort_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cands: Vec<(usize, Vector)> = (0..1000)
            .map(|i| (i, Vector::new((0..32).map(|_| rng.gen_range(-1.0..1.0)).collect())))
            .collect();
        let q = Vector::new((0..32).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut oracle: Vec<(usize, f64)> = cands
            .iter()
            .map(|(i, c)| {
                let dot: f64 = q.values().iter().zip(c.values()).map(|(a, b)| a * b).sum();
                (*i, dot / (q.norm() * c.norm()))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let got = top_k(&q, &cands, 10);
        let got_ids: Vec<usize> = got.iter().map(|x| x.0).collect();
        let want_ids: Vec<usize> = oracle[..10].iter().map(|x| x.0).collect();
        assert_eq!(got_ids, want_ids);
    }

    #[test]
    fn sparse_roundtrip() {
        let x = v(&[0.0, 0.5, 0.0, -0.25]);
        let sparse = x.to_sparse();
        assert_eq!(sparse, vec![(1, 0.5), (3, -0.25)]);
        assert_eq!(Vector::from_sparse(4, &sparse).unwrap(), x);
        assert!(Vector::from_sparse(2, &sparse).is_none());
    }

    #[test]
    fn provider_mismatch_detected() {
        let e = HashEmbedder::new(64);
        assert!(check_compatible("hash-v1", 64, &e).is_ok());
        assert!(matches!(
            check_compatible("http", 64, &e),
            Err(EmbedError::ProviderMismatch { .. })
        ));
        assert!(check_compatible("hash-v1", 256, &e).is_err());
    }

    #[test]
    fn http_provider_parses_batches() {
        let server = test_server::spawn(vec![(
            200,
            r#"{"data":[{"embedding":[1.0,0.0]},{"embedding":[0.0,2.0]}]}"#.into(),
        )]);
        let e = HttpEmbedder::new(server.url.clone(), "m", 2, Duration::from_secs(5));
        let out = e.embed_batch(&["a".into(), "b".into()]).unwrap();
        assert_eq!(out[1].values(), &[0.0, 2.0]);
    }

    #[test]
    fn http_provider_down_is_unavailable() {
        let server = test_server::spawn(vec![(503, "{}".into())]);
        let e = HttpEmbedder::new(server.url.clone(), "m", 2, Duration::from_secs(5));
        assert!(matches!(e.embed("x"), Err(EmbedError::ProviderUnavailable(_))));
    }

    proptest! {
        #[test]
        fn ranking_is_scale_invariant(
            seed in any::<u64>(),
            scale in 0.001f64..1000.0,
            k in 1usize..20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cands: Vec<(usize, Vector)> = (0..60)
                .map(|i| (i, Vector::new((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())))
                .collect();
            let scaled: Vec<(usize, Vector)> =
                cands.iter().map(|(i, c)| (*i, c.scaled(scale))).collect();
            let q = Vector::new((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let a: Vec<usize> = top_k(&q, &cands, k).into_iter().map(|x| x.0).collect();
            let b: Vec<usize> = top_k(&q, &scaled, k).into_iter().map(|x| x.0).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn embed_norm_is_unit(text in "[a-zA-Z ]{1,60}") {
            prop_assume!(text.trim().chars().any(|c| c.is_alphanumeric()));
            let e = HashEmbedder::default();
            let x = e.embed(&text).unwrap();
            prop_assert!((x.norm() - 1.0).abs() < 1e-9);
        }
    }
}
