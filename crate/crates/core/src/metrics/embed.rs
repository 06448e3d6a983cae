//! Token embedding providers.
//!
//! Wire contract for remote providers: `POST {endpoint}` with
//! `{"texts": [...]}`, answered by
//! `{"items": [{"tokens": [...], "vectors": [[...], ...]}, ...]}` in request
//! order. Vectors are normalized on arrival whether or not the server did.

use std::sync::OnceLock;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{MetricsError, TokenEmbeddings};
use crate::gateway::stable_hash;

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;

    /// One entry per input text, in input order. `None` for texts with no
    /// tokens.
    fn embed(&self, texts: &[String]) -> Result<Vec<Option<TokenEmbeddings>>, MetricsError>;
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+(?:'[\p{L}]+)?").expect("valid regex"))
}

/// Lowercased word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    word_re()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .collect()
}

/// Deterministic stand-in for a contextual encoder: each token maps to a
/// seeded Gaussian direction, so identical tokens always share a vector and
/// distinct tokens are nearly orthogonal in high dimension.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim: dim.max(1), seed, id: format!("hash-{dim}-{seed}") }
    }

    pub fn vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(self.seed, &[token]));
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    pub fn embed_one(&self, text: &str) -> Option<TokenEmbeddings> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return None;
        }
        let vectors = tokens.iter().map(|t| self.vector(t)).collect();
        Some(TokenEmbeddings::new(tokens, vectors).expect("hash vectors are unit and non-empty"))
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(64, 0)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Option<TokenEmbeddings>>, MetricsError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbeddingConfig {
    pub endpoint: String,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_batch() -> usize {
    32
}

fn default_timeout() -> u64 {
    60
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
pub struct EmbedResponse {
    pub items: Vec<EmbedItem>,
}

#[derive(Deserialize)]
pub struct EmbedItem {
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

/// Convert one wire response into embeddings, checking the item count.
pub fn decode_embed_response(
    expected: usize,
    body: EmbedResponse,
) -> Result<Vec<Option<TokenEmbeddings>>, MetricsError> {
    if body.items.len() != expected {
        return Err(MetricsError::Provider(format!(
            "expected {expected} items, got {}",
            body.items.len()
        )));
    }
    body.items
        .into_iter()
        .map(|item| {
            if item.tokens.is_empty() {
                Ok(None)
            } else {
                TokenEmbeddings::new(item.tokens, item.vectors).map(Some)
            }
        })
        .collect()
}

pub struct HttpEmbeddingProvider {
    config: HttpEmbeddingConfig,
    client: reqwest::blocking::Client,
    id: String,
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpEmbeddingConfig) -> Result<Self, MetricsError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| MetricsError::Provider(e.to_string()))?;
        let id = format!("http:{}", config.endpoint);
        Ok(Self { config, client, id })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Option<TokenEmbeddings>>, MetricsError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            let resp = self
                .client
                .post(&self.config.endpoint)
                .json(&EmbedRequest { texts: chunk })
                .send()
                .map_err(|e| MetricsError::Provider(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(MetricsError::Provider(format!("status {}", resp.status())));
            }
            let body: EmbedResponse = resp.json().map_err(|e| MetricsError::Provider(e.to_string()))?;
            out.extend(decode_embed_response(chunk.len(), body)?);
        }
        Ok(out)
    }
}
