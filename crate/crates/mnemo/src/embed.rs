//! Text and observation embeddings.
//!
//! The default provider is a fully deterministic feature-hashing embedder:
//! character trigrams are hashed with FNV-1a into a fixed number of signed
//! buckets and the result is L2-normalized. It needs no model weights, no
//! I/O, and produces bit-identical vectors across runs and platforms. A
//! remote provider speaking a small JSON protocol can be swapped in when a
//! learned encoder is available.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Observation;

pub const DEFAULT_DIMENSION: usize = 256;

/// A fixed-dimension embedding. Vectors produced by providers are
/// unit-normalized unless they are exactly zero (the degenerate case for
/// empty observations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("embedding vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "embedding component {v} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// L2-normalizes in place; a zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.0 {
                *v /= n;
            }
        }
        self
    }

    /// Componentwise scaling, used to check scale invariance of retrieval.
    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v * c).collect())
    }
}

/// Cosine similarity. Zero vectors have similarity 0 to everything; the
/// result is always finite and symmetric in its arguments.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum();
    Ok(dot / (na * nb))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Signed character-trigram hashing embedder.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::OutOfRange("embedding dimension must be >= 1".into()));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn accumulate(&self, buckets: &mut [f64], feature: &str) {
        let h = fnv1a64(feature.as_bytes());
        let idx = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        buckets[idx] += sign;
    }

    fn embed_features(&self, text: &str) -> EmbeddingVector {
        let chars: Vec<char> = text.chars().collect();
        let mut buckets = vec![0.0; self.dim];
        if chars.len() < 3 {
            self.accumulate(&mut buckets, text);
        } else {
            let mut gram = String::with_capacity(12);
            for w in chars.windows(3) {
                gram.clear();
                gram.extend(w);
                self.accumulate(&mut buckets, &gram);
            }
        }
        EmbeddingVector(buckets).normalized()
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("embedder text".into()));
        }
        Ok(self.embed_features(text))
    }

    /// Embeds the observation's widget token stream. An observation with no
    /// widgets embeds to the zero vector.
    pub fn embed_observation(&self, obs: &Observation) -> Result<EmbeddingVector> {
        let text = observation_text(obs);
        if text.is_empty() {
            return Ok(EmbeddingVector::zeros(self.dim));
        }
        Ok(self.embed_features(&text))
    }
}

/// Deterministic token rendering of an observation's widget tree: role and
/// label of each widget in layout order, space-joined. The screen id is
/// deliberately excluded so visually identical screens embed identically.
pub fn observation_text(obs: &Observation) -> String {
    let mut tokens = Vec::with_capacity(obs.widgets.len() * 2);
    for w in &obs.widgets {
        for t in [w.role.as_str(), w.label.as_str()] {
            if !t.trim().is_empty() {
                tokens.push(t);
            }
        }
    }
    tokens.join(" ")
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    kind: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    vector: Vec<f64>,
}

/// Client for a remote embedding endpoint. Protocol: `POST {endpoint}/embed`
/// with body `{"kind": "text" | "observation", "content": "..."}`; the
/// response is `{"vector": [..]}` with exactly `dim` finite components.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    endpoint: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, dim: usize, timeout: Duration) -> Result<Self> {
        if dim == 0 {
            return Err(Error::OutOfRange("embedding dimension must be >= 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_owned(),
            dim,
            client,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn request(&self, kind: &str, content: &str) -> Result<EmbeddingVector> {
        let url = format!("{}/embed", self.endpoint);
        let resp = self
            .client
            .post(&url)
            .json(&RemoteRequest { kind, content })
            .send()
            .map_err(|e| Error::RemoteUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::RemoteUnavailable(format!(
                "{url} returned status {}",
                resp.status()
            )));
        }
        let body: RemoteResponse = resp
            .json()
            .map_err(|e| Error::RemoteUnavailable(format!("bad response body: {e}")))?;
        if body.vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                left: body.vector.len(),
                right: self.dim,
            });
        }
        Ok(EmbeddingVector::new(body.vector)?.normalized())
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyInput("embedder text".into()));
        }
        self.request("text", text)
    }

    pub fn embed_observation(&self, obs: &Observation) -> Result<EmbeddingVector> {
        let text = observation_text(obs);
        if text.is_empty() {
            return Ok(EmbeddingVector::zeros(self.dim));
        }
        self.request("observation", &text)
    }
}

/// The embedding backend used by a memory repository.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Hashing(HashingEmbedder),
    Remote(RemoteEmbedder),
}

impl EmbeddingProvider {
    pub fn hashing(dim: usize) -> Result<Self> {
        Ok(Self::Hashing(HashingEmbedder::new(dim)?))
    }

    pub fn remote(endpoint: &str, dim: usize, timeout: Duration) -> Result<Self> {
        Ok(Self::Remote(RemoteEmbedder::new(endpoint, dim, timeout)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Hashing(h) => h.dim(),
            Self::Remote(r) => r.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Hashing(_) => "hashing",
            Self::Remote(_) => "remote",
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        match self {
            Self::Hashing(h) => h.embed_text(text),
            Self::Remote(r) => r.embed_text(text),
        }
    }

    pub fn embed_observation(&self, obs: &Observation) -> Result<EmbeddingVector> {
        match self {
            Self::Hashing(h) => h.embed_observation(obs),
            Self::Remote(r) => r.embed_observation(obs),
        }
    }
}
