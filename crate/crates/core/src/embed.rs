//! Fixed-length unit embeddings for skeletons and logical forms.
//!
//! [`HashEmbedder`] is a deterministic offline provider: word tokens and
//! character trigrams are feature-hashed with a seeded hash and a sign bit,
//! counted, and L2-normalised. [`HttpEmbedder`] calls a remote sentence
//! encoder behind the same [`EmbeddingProvider`] trait.

use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{excerpt, JsonClient, TransportError};
use crate::retry::{self, RetryPolicy};

pub const DEFAULT_DIM: usize = 384;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("cannot embed empty input")]
    EmptyInput,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding dimension must be at least 16, got {0}")]
    InvalidDimension(usize),
    #[error("embedding provider failed after {attempts} attempt(s): {message}")]
    ProviderFailure { attempts: u32, message: String },
}

/// Unit-length real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalises `values`; an all-zero vector is rejected.
    pub fn from_raw(mut values: Vec<f64>) -> Result<Self, EmbedError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::EmptyInput);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    cosine_raw(a.values(), b.values())
}

pub fn cosine_raw(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Short description recorded in run manifests.
    fn describe(&self) -> String;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let mut out = provider.embed_batch(&[text])?;
    out.pop().ok_or(EmbedError::ProviderFailure {
        attempts: 1,
        message: "provider returned no vector".into(),
    })
}

/// Embeds many texts in fixed-size batches, preserving order.
pub fn embed_all(provider: &dyn EmbeddingProvider, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    const BATCH: usize = 64;
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyInput);
    }
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(BATCH) {
        let refs: Vec<&str> = chunk.iter().map(String::as_str).collect();
        out.extend(provider.embed_batch(&refs)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

pub fn hash_embedder(dim: usize, seed: u64) -> Result<HashEmbedder, EmbedError> {
    HashEmbedder::new(dim, seed)
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbedError> {
        if dim < 16 {
            return Err(EmbedError::InvalidDimension(dim));
        }
        Ok(Self { dim, seed })
    }

    fn bucket(&self, namespace: u8, feature: &str) -> (usize, f64) {
        let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        h.write_u8(namespace);
        h.write(feature.as_bytes());
        let x = mix64(h.finish());
        let sign = if x >> 63 == 1 { -1.0 } else { 1.0 };
        ((x % self.dim as u64) as usize, sign)
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let lower = text.to_lowercase();
        let mut values = vec![0.0; self.dim];
        for word in lower
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|w| !w.is_empty())
        {
            let (i, s) = self.bucket(b'w', word);
            values[i] += s;
        }
        let chars: Vec<char> = lower.chars().collect();
        let mut gram = String::with_capacity(12);
        for window in chars.windows(3) {
            gram.clear();
            gram.extend(window);
            let (i, s) = self.bucket(b'c', &gram);
            values[i] += s;
        }
        if values.iter().all(|v| *v == 0.0) {
            if lower.trim().is_empty() {
                return Err(EmbedError::EmptyInput);
            }
            // every signed feature cancelled out; fall back to one feature
            // for the whole text so the output stays a unit vector
            let (i, _) = self.bucket(b'x', &lower);
            values[i] = 1.0;
        }
        EmbeddingVector::from_raw(values)
    }
}

/// splitmix64 finaliser; spreads FNV output over all bits.
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn describe(&self) -> String {
        format!("hash(dim={}, seed={})", self.dim, self.seed)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                if t.trim().is_empty() {
                    Err(EmbedError::EmptyInput)
                } else {
                    self.embed(t)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub dim: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpEmbedderConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/embeddings".into(),
            model: "all-MiniLM-L6-v2".into(),
            api_key_env: "KQG_EMBED_API_KEY".into(),
            dim: DEFAULT_DIM,
            timeout_secs: 30,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedResponse {
    Data { data: Vec<EmbedDatum> },
    Plain { embeddings: Vec<Vec<f64>> },
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// Remote sentence encoder. Accepts `{"model", "input": [..]}` requests and
/// either `{"data": [{"embedding": [..]}]}` or `{"embeddings": [[..]]}`
/// responses.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    api_key: Option<String>,
    client: JsonClient,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let client = JsonClient::new(Duration::from_secs(config.timeout_secs));
        Self { config, api_key, client }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, (bool, String)> {
        let body = serde_json::to_value(EmbedRequest { model: &self.config.model, input: texts })
            .map_err(|e| (false, e.to_string()))?;
        let (status, text) = self
            .client
            .post(&self.config.endpoint, self.api_key.as_deref(), &body)
            .map_err(|e| match e {
                TransportError::Timeout => (true, "timeout".to_string()),
                TransportError::Other(m) => (true, m),
            })?;
        if status == 429 || status >= 500 {
            return Err((true, format!("status {status}: {}", excerpt(&text))));
        }
        if status >= 400 {
            return Err((false, format!("status {status}: {}", excerpt(&text))));
        }
        let parsed: EmbedResponse =
            serde_json::from_str(&text).map_err(|e| (false, format!("bad response body: {e}")))?;
        Ok(match parsed {
            EmbedResponse::Data { data } => data.into_iter().map(|d| d.embedding).collect(),
            EmbedResponse::Plain { embeddings } => embeddings,
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn describe(&self) -> String {
        format!("http(model={}, endpoint={}, dim={})", self.config.model, self.config.endpoint, self.config.dim)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyInput);
        }
        let seed = texts.iter().map(|t| t.len() as u64).sum();
        let outcome = retry::run(&self.config.retry, seed, |_| self.request(texts), |(transient, _)| *transient);
        let raw = outcome.result.map_err(|(_, message)| EmbedError::ProviderFailure {
            attempts: outcome.attempts,
            message,
        })?;
        if raw.len() != texts.len() {
            return Err(EmbedError::ProviderFailure {
                attempts: outcome.attempts,
                message: format!("expected {} vectors, got {}", texts.len(), raw.len()),
            });
        }
        raw.into_iter()
            .map(|v| {
                if v.len() != self.config.dim {
                    return Err(EmbedError::DimensionMismatch { left: v.len(), right: self.config.dim });
                }
                EmbeddingVector::from_raw(v)
            })
            .collect()
    }
}
