//! Positive/negative exemplar corpora.
//!
//! Zero-shot chain-of-thought inference runs over the training items; each
//! item becomes an exemplar record whose polarity is decided by comparing
//! the extracted prediction with the gold answer. Records keep the model's
//! rationale verbatim (negatives included, since the contrastive baseline
//! displays them) and are persisted as JSONL with a header line carrying
//! provider and build metadata.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer_extraction::{extract, is_correct, ExtractError, TaskFamily};
use crate::demo_builder::zero_shot_prompt;
use crate::embedding::{EmbedError, EmbeddingProvider, EmbeddingVector, ProviderDescriptor};
use crate::llm_gateway::{CompletionRequest, Gateway, GatewayError};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 20;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no training items supplied")]
    EmptyInput,
    #[error("provider failure on item {id}: {source}")]
    Provider {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error("gateway failure on item {id}: {source}")]
    Gateway {
        id: String,
        #[source]
        source: GatewayError,
    },
    #[error("gold answer for item {id} does not normalize: {source}")]
    InvalidGold {
        id: String,
        #[source]
        source: ExtractError,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("corrupt corpus line {line}: {detail}")]
    CorruptLine { line: usize, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

/// One labeled training exemplar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarRecord {
    pub id: String,
    pub question: String,
    pub rationale: String,
    pub predicted: String,
    pub gold: String,
    pub polarity: Polarity,
    pub embedding: EmbeddingVector,
    pub cluster: usize,
    pub dataset: String,
    #[serde(default)]
    pub extraction_failed: bool,
}

/// The positive and negative stores plus the metadata they were built
/// with. Stores are sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPair {
    pub positives: Vec<ExemplarRecord>,
    pub negatives: Vec<ExemplarRecord>,
    pub provider: ProviderDescriptor,
    pub dataset: String,
    pub task_family: TaskFamily,
    pub build_seed: u64,
    pub built_at_ms: u64,
}

impl CorpusPair {
    pub fn find(&self, id: &str) -> Option<&ExemplarRecord> {
        self.positives
            .iter()
            .chain(self.negatives.iter())
            .find(|r| r.id == id)
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One item of the training half: id, question text, gold answer, and the
/// cluster it was assigned to before the split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainItem {
    pub id: String,
    pub question: String,
    pub gold: String,
    #[serde(default)]
    pub cluster: usize,
}

/// Raw dataset row: `{"id": ..., "question": ..., "answer": ...}` per
/// JSONL line. For multiple choice the question text includes the
/// rendered choice block and the answer is the letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub question: String,
    pub answer: String,
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: DatasetItem =
            serde_json::from_str(&line).map_err(|e| CorpusError::CorruptLine {
                line: idx + 1,
                detail: e.to_string(),
            })?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(items)
}

/// Options controlling corpus construction.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Where to write partial progress. Present → interrupted builds
    /// resume from here; removed again once the build completes.
    pub checkpoint_path: Option<PathBuf>,
    /// Records per checkpoint flush (0 means the default of 20).
    pub checkpoint_every: usize,
}

struct CorpusAccumulator {
    records: Vec<ExemplarRecord>,
    provider: ProviderDescriptor,
    dataset: String,
    task_family: TaskFamily,
    build_seed: u64,
    built_at_ms: u64,
}

impl CorpusAccumulator {
    fn done_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    fn into_pair(mut self) -> CorpusPair {
        self.records.sort_by(|a, b| a.id.cmp(&b.id));
        let (positives, negatives) = self
            .records
            .into_iter()
            .partition(|r| r.polarity == Polarity::Positive);
        CorpusPair {
            positives,
            negatives,
            provider: self.provider,
            dataset: self.dataset,
            task_family: self.task_family,
            build_seed: self.build_seed,
            built_at_ms: self.built_at_ms,
        }
    }

    fn snapshot_pair(&self) -> CorpusPair {
        let mut clone = CorpusPair {
            positives: Vec::new(),
            negatives: Vec::new(),
            provider: self.provider.clone(),
            dataset: self.dataset.clone(),
            task_family: self.task_family.clone(),
            build_seed: self.build_seed,
            built_at_ms: self.built_at_ms,
        };
        for r in &self.records {
            match r.polarity {
                Polarity::Positive => clone.positives.push(r.clone()),
                Polarity::Negative => clone.negatives.push(r.clone()),
            }
        }
        clone.positives.sort_by(|a, b| a.id.cmp(&b.id));
        clone.negatives.sort_by(|a, b| a.id.cmp(&b.id));
        clone
    }
}

/// Builds the positive and negative corpora by running zero-shot
/// chain-of-thought over the training items.
///
/// Items whose completion succeeds but yields no extractable answer are
/// classed negative with an empty prediction and the `extraction_failed`
/// flag. Gateway or embedding failures abort the build after flushing a
/// checkpoint (when one is configured).
pub fn build_corpora(
    items: &[TrainItem],
    gateway: &Gateway,
    embedder: &dyn EmbeddingProvider,
    task_family: &TaskFamily,
    dataset: &str,
    build_seed: u64,
    opts: &BuildOptions,
) -> Result<CorpusPair, CorpusError> {
    if items.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut acc = CorpusAccumulator {
        records: Vec::new(),
        provider: embedder.descriptor().clone(),
        dataset: dataset.to_string(),
        task_family: task_family.clone(),
        build_seed,
        built_at_ms: now_ms(),
    };

    // Resume from a previous partial build when possible.
    if let Some(ckpt) = &opts.checkpoint_path {
        if ckpt.exists() {
            let prev = load_corpus(ckpt)?;
            if prev.provider != acc.provider
                || prev.dataset != acc.dataset
                || prev.task_family != acc.task_family
                || prev.build_seed != build_seed
            {
                return Err(CorpusError::SchemaMismatch(
                    "checkpoint was built with different settings".into(),
                ));
            }
            acc.records = prev.positives.into_iter().chain(prev.negatives).collect();
        }
    }

    let done = acc.done_ids();
    let pending: Vec<&TrainItem> = items.iter().filter(|i| !done.contains(&i.id)).collect();
    let chunk_size = if opts.checkpoint_every == 0 {
        DEFAULT_CHECKPOINT_EVERY
    } else {
        opts.checkpoint_every
    };

    for chunk in pending.chunks(chunk_size) {
        let mut requests = Vec::with_capacity(chunk.len());
        for item in chunk {
            let request = CompletionRequest::new(
                zero_shot_prompt(&item.question),
                gateway.model_name().to_string(),
            )
            .map_err(|source| CorpusError::Gateway {
                id: item.id.clone(),
                source,
            })?;
            requests.push(request);
        }
        let responses = gateway.complete_batch(&requests);
        for (item, response) in chunk.iter().zip(responses) {
            let rationale = match response {
                Ok(text) => text,
                Err(source) => {
                    flush_checkpoint(&acc, opts)?;
                    return Err(CorpusError::Gateway {
                        id: item.id.clone(),
                        source,
                    });
                }
            };
            let record = match label_item(item, rationale, embedder, task_family, dataset) {
                Ok(record) => record,
                Err(e) => {
                    flush_checkpoint(&acc, opts)?;
                    return Err(e);
                }
            };
            acc.records.push(record);
        }
        flush_checkpoint(&acc, opts)?;
    }

    if let Some(ckpt) = &opts.checkpoint_path {
        let _ = fs::remove_file(ckpt);
    }
    Ok(acc.into_pair())
}

fn label_item(
    item: &TrainItem,
    rationale: String,
    embedder: &dyn EmbeddingProvider,
    task_family: &TaskFamily,
    dataset: &str,
) -> Result<ExemplarRecord, CorpusError> {
    let gold = extract(&item.gold, task_family).map_err(|source| CorpusError::InvalidGold {
        id: item.id.clone(),
        source,
    })?;
    let embedding =
        embedder
            .embed_text(&item.question)
            .map_err(|source| CorpusError::Provider {
                id: item.id.clone(),
                source,
            })?;
    let (predicted, polarity, extraction_failed) = match extract(&rationale, task_family) {
        Ok(pred) => {
            let correct = is_correct(&pred, &gold).unwrap_or(false);
            let polarity = if correct {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            (pred.value, polarity, false)
        }
        Err(ExtractError::NoAnswerFound(_)) => (String::new(), Polarity::Negative, true),
        Err(e) => {
            return Err(CorpusError::InvalidGold {
                id: item.id.clone(),
                source: e,
            })
        }
    };
    Ok(ExemplarRecord {
        id: item.id.clone(),
        question: item.question.clone(),
        rationale,
        predicted,
        gold: gold.value,
        polarity,
        embedding,
        cluster: item.cluster,
        dataset: dataset.to_string(),
        extraction_failed,
    })
}

fn flush_checkpoint(acc: &CorpusAccumulator, opts: &BuildOptions) -> Result<(), CorpusError> {
    if let Some(path) = &opts.checkpoint_path {
        save_corpus(&acc.snapshot_pair(), path)?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusHeader {
    schema_version: u32,
    provider: ProviderDescriptor,
    dataset: String,
    task_family: TaskFamily,
    build_seed: u64,
    built_at_ms: u64,
}

/// Writes a corpus as JSONL: a header line followed by one record per
/// line, positives then negatives, each store sorted by id.
pub fn save_corpus(pair: &CorpusPair, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let header = CorpusHeader {
        schema_version: CORPUS_SCHEMA_VERSION,
        provider: pair.provider.clone(),
        dataset: pair.dataset.clone(),
        task_family: pair.task_family.clone(),
        build_seed: pair.build_seed,
        built_at_ms: pair.built_at_ms,
    };
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for record in pair.positives.iter().chain(pair.negatives.iter()) {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}

/// Loads a corpus file, validating schema version, embedding dimensions,
/// and id disjointness.
pub fn load_corpus(path: &Path) -> Result<CorpusPair, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = content.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| CorpusError::SchemaMismatch("empty corpus file".into()))?;
    let header: CorpusHeader =
        serde_json::from_str(header_line).map_err(|e| CorpusError::CorruptLine {
            line: 1,
            detail: format!("bad header: {e}"),
        })?;
    if header.schema_version != CORPUS_SCHEMA_VERSION {
        return Err(CorpusError::SchemaMismatch(format!(
            "schema version {} (supported: {CORPUS_SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    let mut pair = CorpusPair {
        positives: Vec::new(),
        negatives: Vec::new(),
        provider: header.provider,
        dataset: header.dataset,
        task_family: header.task_family,
        build_seed: header.build_seed,
        built_at_ms: header.built_at_ms,
    };
    let mut seen = BTreeSet::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExemplarRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::CorruptLine {
                line: idx + 1,
                detail: e.to_string(),
            })?;
        if record.embedding.dim() != pair.provider.dim {
            return Err(CorpusError::SchemaMismatch(format!(
                "record {} has dim {}, header says {}",
                record.id,
                record.embedding.dim(),
                pair.provider.dim
            )));
        }
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::SchemaMismatch(format!(
                "duplicate record id {}",
                record.id
            )));
        }
        match record.polarity {
            Polarity::Positive => pair.positives.push(record),
            Polarity::Negative => pair.negatives.push(record),
        }
    }
    Ok(pair)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
