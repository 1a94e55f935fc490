//! Experiment configuration: dataset location, task family, clustering and
//! split seeds, strategy list, and provider wiring. Configs live in JSON
//! files consumed by the CLI.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::answer_extraction::TaskFamily;
use crate::demo_builder::StrategyConfig;
use crate::embedding::{
    EmbeddingProvider, FixedMapProvider, RemoteEmbeddingConfig, RemoteEmbeddingProvider,
    TrigramHashProvider, DEFAULT_TRIGRAM_DIM,
};
use crate::harness::synthetic::{ThresholdOracle, ThresholdScript};
use crate::llm_gateway::{CallLog, Gateway, RemoteLlmConfig, ScriptedBehaviorFile};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub name: String,
}

/// Seeds for the pipeline stages: `split` drives clustering and the
/// per-cluster halving, `random_baseline` the random few-shot draw, and
/// `synthetic` the synthetic task generator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    #[serde(default)]
    pub random_baseline: u64,
    #[serde(default)]
    pub synthetic: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingProviderConfig {
    /// Deterministic character-trigram hashing (offline).
    Trigram {
        #[serde(default = "default_trigram_dim")]
        dim: usize,
    },
    /// Fixed text-to-vector table loaded from a JSONL file with lines
    /// `{"text": ..., "vector": [..]}` (offline; synthetic tasks).
    FixedMap { path: PathBuf },
    /// Remote embedding endpoint.
    Remote(RemoteEmbeddingConfig),
}

fn default_trigram_dim() -> usize {
    DEFAULT_TRIGRAM_DIM
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmConfig {
    /// Substring/pattern rules from a JSON file (offline).
    Scripted { path: PathBuf },
    /// Similarity-threshold oracle from a JSON file (offline; synthetic
    /// tasks).
    Threshold { path: PathBuf },
    /// Remote OpenAI-style chat endpoint.
    Remote(RemoteLlmConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub task_family: TaskFamily,
    pub cluster_k: usize,
    pub seeds: Seeds,
    pub strategies: Vec<StrategyConfig>,
    pub embedding_provider: EmbeddingProviderConfig,
    pub llm: LlmConfig,
    /// Corpus file location; defaults to `<output_dir>/corpus.jsonl`.
    /// Loaded when present, built and saved otherwise.
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub call_log_path: Option<PathBuf>,
}

fn default_max_in_flight() -> usize {
    crate::llm_gateway::DEFAULT_MAX_IN_FLIGHT
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("bad config JSON: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.cluster_k == 0 {
            return Err(HarnessError::Config("cluster_k must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(HarnessError::Config("strategies must be non-empty".into()));
        }
        self.task_family
            .validate()
            .map_err(|e| HarnessError::Config(format!("bad task_family: {e}")))?;
        for s in &self.strategies {
            s.validate()
                .map_err(|e| HarnessError::Config(format!("bad strategy: {e}")))?;
        }
        Ok(())
    }

    pub fn corpus_file(&self) -> PathBuf {
        self.corpus_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("corpus.jsonl"))
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, HarnessError> {
        match &self.embedding_provider {
            EmbeddingProviderConfig::Trigram { dim } => {
                Ok(Arc::new(TrigramHashProvider::new(*dim)))
            }
            EmbeddingProviderConfig::FixedMap { path } => {
                Ok(Arc::new(load_fixed_map_provider(path)?))
            }
            EmbeddingProviderConfig::Remote(config) => {
                Ok(Arc::new(RemoteEmbeddingProvider::new(config.clone())))
            }
        }
    }

    pub fn build_gateway(&self) -> Result<Gateway, HarnessError> {
        let gateway = match &self.llm {
            LlmConfig::Scripted { path } => {
                let text = fs::read_to_string(path).map_err(|e| {
                    HarnessError::Config(format!("cannot read script {}: {e}", path.display()))
                })?;
                let file: ScriptedBehaviorFile = serde_json::from_str(&text)
                    .map_err(|e| HarnessError::Config(format!("bad script JSON: {e}")))?;
                let behavior = file
                    .into_behavior()
                    .map_err(|e| HarnessError::Config(format!("bad script: {e}")))?;
                Gateway::scripted(behavior)
            }
            LlmConfig::Threshold { path } => {
                let text = fs::read_to_string(path).map_err(|e| {
                    HarnessError::Config(format!("cannot read oracle {}: {e}", path.display()))
                })?;
                let script: ThresholdScript = serde_json::from_str(&text)
                    .map_err(|e| HarnessError::Config(format!("bad oracle JSON: {e}")))?;
                Gateway::oracle(Arc::new(ThresholdOracle::new(script)))
            }
            LlmConfig::Remote(config) => Gateway::remote(config.clone()),
        };
        let gateway = gateway.with_max_in_flight(self.max_in_flight);
        Ok(match &self.call_log_path {
            Some(path) => gateway.with_log(CallLog::with_sink(path.clone())),
            None => gateway,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FixedMapLine {
    text: String,
    vector: Vec<f64>,
}

/// Loads a fixed-map embedding table from JSONL.
pub fn load_fixed_map_provider(path: &Path) -> Result<FixedMapProvider, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| {
        HarnessError::Config(format!("cannot read embeddings {}: {e}", path.display()))
    })?;
    let mut entries = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: FixedMapLine = serde_json::from_str(line)
            .map_err(|e| HarnessError::Config(format!("bad embedding line {}: {e}", idx + 1)))?;
        entries.insert(parsed.text, parsed.vector);
    }
    FixedMapProvider::new("fixed-map", entries)
        .map_err(|e| HarnessError::Config(format!("bad embedding table: {e}")))
}

/// Writes a fixed-map embedding table as JSONL.
pub fn save_fixed_map(
    entries: &BTreeMap<String, Vec<f64>>,
    path: &Path,
) -> Result<(), HarnessError> {
    let mut out = String::new();
    for (text, vector) in entries {
        let line = serde_json::to_string(&FixedMapLine {
            text: text.clone(),
            vector: vector.clone(),
        })
        .expect("line serializes");
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| {
        HarnessError::Config(format!("cannot write embeddings {}: {e}", path.display()))
    })
}
