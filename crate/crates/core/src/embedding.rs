//! Sentence-embedding providers and cosine similarity.
//!
//! All vectors are unit-norm; similarity between two texts is the dot
//! product of their embeddings. Providers are pluggable: a remote
//! OpenAI-compatible endpoint for real runs, plus two deterministic offline
//! providers (character-trigram hashing, fixed lookup tables) so every test
//! and the synthetic pipeline run without a network.
//!
//! # Trigram-hash embedding rule
//!
//! The deterministic test provider maps text to a vector as follows:
//!
//! 1. Trim leading/trailing whitespace; reject empty text.
//! 2. Take every window of 3 consecutive characters (Unicode scalar
//!    values) of the trimmed text as a gram. Texts shorter than 3
//!    characters contribute the whole text as a single gram.
//! 3. For each gram, hash its UTF-8 bytes with 64-bit FNV-1a whose initial
//!    state is `FNV_OFFSET_BASIS XOR TRIGRAM_SEED`
//!    (`TRIGRAM_SEED = 0x6e65_6761_6e63_6872`).
//! 4. Add 1.0 to component `hash % dim`.
//! 5. L2-normalize the result.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::{fnv1a64_seeded, FNV_OFFSET_BASIS};
use crate::http::{post_with_retries, HttpTransport, Transport};

/// Fixed seed constant for the trigram-hash provider.
pub const TRIGRAM_SEED: u64 = 0x6e65_6761_6e63_6872;

/// Default dimensionality of the trigram-hash provider.
pub const DEFAULT_TRIGRAM_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text is empty after trimming whitespace")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid vector: {0}")]
    InvalidVector(String),
}

/// A unit-norm embedding. Construction normalizes, so the L2 norm is 1
/// within 1e-9 for every value of this type. Deserialization checks the
/// invariant instead of silently renormalizing.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let values = Vec::<f64>::deserialize(deserializer)?;
        if values.is_empty() {
            return Err(serde::de::Error::custom("zero-dimensional embedding"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(serde::de::Error::custom(format!(
                "embedding is not unit-norm (norm = {norm})"
            )));
        }
        Ok(Self { values })
    }
}

impl EmbeddingVector {
    /// Builds a unit vector from raw components, normalizing them.
    pub fn unit(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("zero-dimensional vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::InvalidVector("zero norm".into()));
        }
        let values = values.into_iter().map(|v| v / norm).collect();
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity of two unit vectors: their dot product.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    Ok(u.values
        .iter()
        .zip(v.values.iter())
        .map(|(a, b)| a * b)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Remote,
    DeterministicTest,
}

/// Identity of an embedding provider. Recorded in every corpus built with
/// it; corpora and queries embedded by different descriptors never mix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub dim: usize,
    pub kind: ProviderKind,
}

/// A sentence-embedding source. Implementations are immutable after
/// construction and safe to call from multiple threads.
pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    /// Embeds one text into a unit vector of the provider's dimension.
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

fn trimmed_nonempty(text: &str) -> Result<&str, EmbedError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        Err(EmbedError::EmptyText)
    } else {
        Ok(trimmed)
    }
}

/// Deterministic offline provider implementing the trigram-hash rule
/// documented at module level.
pub struct TrigramHashProvider {
    descriptor: ProviderDescriptor,
}

impl TrigramHashProvider {
    pub fn new(dim: usize) -> Self {
        Self {
            descriptor: ProviderDescriptor {
                provider_id: format!("trigram-hash-{dim}"),
                dim,
                kind: ProviderKind::DeterministicTest,
            },
        }
    }
}

impl Default for TrigramHashProvider {
    fn default() -> Self {
        Self::new(DEFAULT_TRIGRAM_DIM)
    }
}

impl EmbeddingProvider for TrigramHashProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let trimmed = trimmed_nonempty(text)?;
        let dim = self.descriptor.dim;
        let mut buckets = vec![0.0f64; dim];
        let chars: Vec<char> = trimmed.chars().collect();
        let seed_state = FNV_OFFSET_BASIS ^ TRIGRAM_SEED;
        let mut gram = String::new();
        let mut bump = |gram: &str| {
            let h = fnv1a64_seeded(seed_state, gram.as_bytes());
            buckets[(h % dim as u64) as usize] += 1.0;
        };
        if chars.len() < 3 {
            bump(trimmed);
        } else {
            for window in chars.windows(3) {
                gram.clear();
                gram.extend(window.iter());
                bump(&gram);
            }
        }
        EmbeddingVector::unit(buckets)
    }
}

/// Provider backed by a fixed text-to-vector table. Used by the synthetic
/// task, where item vectors come from a generator instead of an encoder.
pub struct FixedMapProvider {
    descriptor: ProviderDescriptor,
    map: BTreeMap<String, EmbeddingVector>,
}

impl FixedMapProvider {
    pub fn new(
        provider_id: impl Into<String>,
        entries: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, EmbedError> {
        let mut map = BTreeMap::new();
        let mut dim = None;
        for (text, raw) in entries {
            let vec = EmbeddingVector::unit(raw)?;
            match dim {
                None => dim = Some(vec.dim()),
                Some(d) if d != vec.dim() => {
                    return Err(EmbedError::DimMismatch {
                        expected: d,
                        got: vec.dim(),
                    })
                }
                _ => {}
            }
            map.insert(text, vec);
        }
        let dim = dim.ok_or_else(|| EmbedError::InvalidVector("empty fixed map".into()))?;
        Ok(Self {
            descriptor: ProviderDescriptor {
                provider_id: provider_id.into(),
                dim,
                kind: ProviderKind::DeterministicTest,
            },
            map,
        })
    }
}

impl EmbeddingProvider for FixedMapProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let trimmed = trimmed_nonempty(text)?;
        self.map.get(trimmed).cloned().ok_or_else(|| {
            EmbedError::ProviderUnavailable(format!("no fixed embedding for text: {trimmed:?}"))
        })
    }
}

/// Configuration for the remote embedding endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteEmbeddingConfig {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
}

fn default_timeout_secs() -> u64 {
    30
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    1000
}
fn default_max_in_flight() -> usize {
    4
}
fn default_api_key_env() -> String {
    "NEGANCHOR_API_KEY".to_string()
}

/// Counting semaphore bounding concurrent remote requests.
struct InFlightGate {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(cap: usize) -> Self {
        Self {
            permits: Mutex::new(cap.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().unwrap() += 1;
        self.freed.notify_one();
    }
}

/// Remote provider speaking the JSON embedding wire format:
/// request `{"input": [text], "model": ...}`, response
/// `{"data": [{"embedding": [..]}]}`. Vectors are L2-normalized after
/// receipt and checked against the declared dimension.
pub struct RemoteEmbeddingProvider {
    descriptor: ProviderDescriptor,
    config: RemoteEmbeddingConfig,
    transport: Arc<dyn Transport>,
    gate: InFlightGate,
}

impl RemoteEmbeddingProvider {
    pub fn new(config: RemoteEmbeddingConfig) -> Self {
        Self::with_transport(config, Arc::new(HttpTransport::new()))
    }

    pub fn with_transport(config: RemoteEmbeddingConfig, transport: Arc<dyn Transport>) -> Self {
        Self {
            descriptor: ProviderDescriptor {
                provider_id: format!("remote:{}", config.model),
                dim: config.dim,
                kind: ProviderKind::Remote,
            },
            gate: InFlightGate::new(config.max_in_flight),
            config,
            transport,
        }
    }

    fn api_key(&self) -> Result<String, EmbedError> {
        std::env::var(&self.config.api_key_env).map_err(|_| {
            EmbedError::ProviderUnavailable(format!(
                "API key environment variable {} is not set",
                self.config.api_key_env
            ))
        })
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let trimmed = trimmed_nonempty(text)?;
        let key = self.api_key()?;
        let body = serde_json::json!({
            "input": [trimmed],
            "model": self.config.model,
        });
        let headers = vec![
            ("authorization".to_string(), format!("Bearer {key}")),
            ("content-type".to_string(), "application/json".to_string()),
        ];
        self.gate.acquire();
        let result = post_with_retries(
            self.transport.as_ref(),
            &self.config.endpoint,
            &headers,
            &body,
            Duration::from_secs(self.config.timeout_secs),
            self.config.retries,
            self.config.backoff_base_ms,
            &mut |_, _| {},
        );
        self.gate.release();
        let resp = result.map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        if resp.status != 200 {
            return Err(EmbedError::ProviderUnavailable(format!(
                "http {}: {}",
                resp.status, resp.body
            )));
        }
        let parsed: serde_json::Value = serde_json::from_str(&resp.body)
            .map_err(|e| EmbedError::ProviderUnavailable(format!("malformed response: {e}")))?;
        let raw = parsed
            .get("data")
            .and_then(|d| d.get(0))
            .and_then(|d| d.get("embedding"))
            .and_then(|e| e.as_array())
            .ok_or_else(|| {
                EmbedError::ProviderUnavailable("response missing data[0].embedding".into())
            })?;
        let values: Vec<f64> = raw.iter().filter_map(|v| v.as_f64()).collect();
        if values.len() != self.config.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.config.dim,
                got: values.len(),
            });
        }
        EmbeddingVector::unit(values)
    }
}
