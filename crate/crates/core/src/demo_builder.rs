//! Demonstration selection strategies and prompt rendering.
//!
//! Five strategies produce [`PromptBundle`]s: zero-shot chain-of-thought,
//! similarity-retrieved positives, the contrastive template with paired
//! positives/negatives, seeded random positives, and negative-anchored
//! selection (direct positives for the query plus positives retrieved via
//! the query's nearest negatives).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusPair, ExemplarRecord};
use crate::embedding::{EmbedError, EmbeddingProvider};
use crate::retrieval::{anchor_positives, top_k, RetrievalError};

/// Chain-of-thought trigger appended after every query.
pub const COT_TRIGGER: &str = "Let's think step by step.";

/// Instruction template for the contrastive strategy. The bracketed slots
/// are replaced by rendered exemplar blocks.
pub const CONTRASTIVE_TEMPLATE: &str = "Below is a positive example and a negative example. Learn from the positive example and avoid making the mistakes in the negative example. Here is the positive example: [positive example], And here is the negative example: [negative example]";

/// The sentence of the contrastive instruction checked byte-for-byte.
pub const CONTRASTIVE_INSTRUCTION: &str =
    "Learn from the positive example and avoid making the mistakes in the negative example";

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("invalid strategy: {0}")]
    StrategyInvalid(String),
    #[error("corpus too small: needed {needed}, available {available}")]
    InsufficientCorpus { needed: usize, available: usize },
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(RetrievalError),
}

impl From<RetrievalError> for DemoError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::PositiveStoreEmpty { .. } => DemoError::InsufficientCorpus {
                needed: 1,
                available: 0,
            },
            other => DemoError::Retrieval(other),
        }
    }
}

/// A demonstration-selection strategy. `m` counts direct positives, `n`
/// counts negative-anchored positives; their sum is the demonstration
/// total for the negative-anchored strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    ZeroShotCot,
    SimilarityFewShot {
        total: usize,
    },
    ContrastiveCot {
        total: usize,
    },
    RandomFewShot {
        total: usize,
        seed: u64,
    },
    NegAnchored {
        m: usize,
        n: usize,
        #[serde(default)]
        allow_duplicate_anchors: bool,
        #[serde(default)]
        anchored_first: bool,
    },
}

impl StrategyConfig {
    pub fn neg_anchored(m: usize, n: usize) -> Self {
        StrategyConfig::NegAnchored {
            m,
            n,
            allow_duplicate_anchors: false,
            anchored_first: false,
        }
    }

    /// Number of demonstrations the bundle will carry.
    pub fn total(&self) -> usize {
        match self {
            StrategyConfig::ZeroShotCot => 0,
            StrategyConfig::SimilarityFewShot { total } => *total,
            StrategyConfig::ContrastiveCot { total } => *total,
            StrategyConfig::RandomFewShot { total, .. } => *total,
            StrategyConfig::NegAnchored { m, n, .. } => m + n,
        }
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        match self {
            StrategyConfig::SimilarityFewShot { total }
            | StrategyConfig::RandomFewShot { total, .. } => {
                if *total == 0 {
                    return Err(DemoError::StrategyInvalid(
                        "few-shot total must be at least 1".into(),
                    ));
                }
            }
            StrategyConfig::ContrastiveCot { total } => {
                if *total == 0 || *total % 2 != 0 {
                    return Err(DemoError::StrategyInvalid(
                        "contrastive total must be even and non-zero".into(),
                    ));
                }
            }
            StrategyConfig::NegAnchored { m, n, .. } => {
                if m + n == 0 {
                    return Err(DemoError::StrategyInvalid(
                        "neg-anchored needs m + n >= 1".into(),
                    ));
                }
            }
            StrategyConfig::ZeroShotCot => {}
        }
        Ok(())
    }

    pub fn display_name(&self) -> String {
        match self {
            StrategyConfig::ZeroShotCot => "zero-shot-cot".to_string(),
            StrategyConfig::SimilarityFewShot { total } => {
                format!("similarity-few-shot(k={total})")
            }
            StrategyConfig::ContrastiveCot { total } => format!("contrastive-cot(k={total})"),
            StrategyConfig::RandomFewShot { total, .. } => format!("random-few-shot(k={total})"),
            StrategyConfig::NegAnchored { m, n, .. } => format!("neg-anchored(m={m},n={n})"),
        }
    }
}

/// One rendered-ready demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub exemplar_id: String,
    pub question: String,
    pub rationale: String,
    pub answer: String,
}

impl Demonstration {
    fn from_record(record: &ExemplarRecord) -> Self {
        Self {
            exemplar_id: record.id.clone(),
            question: record.question.clone(),
            rationale: record.rationale.clone(),
            answer: record.predicted.clone(),
        }
    }
}

/// Ordered demonstrations plus the query, ready to render.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub demonstrations: Vec<Demonstration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_block: Option<Vec<Demonstration>>,
    pub query: String,
    pub template_id: String,
}

fn find_record<'a>(store: &'a [ExemplarRecord], id: &str) -> &'a ExemplarRecord {
    store
        .iter()
        .find(|r| r.id == id)
        .expect("retrieval hit resolves to a store record")
}

/// Partial Fisher-Yates: `k` distinct indices out of `0..n`, uniform.
fn sample_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Builds the demonstration bundle for `query` under `strategy`.
pub fn build(
    query: &str,
    corpora: &CorpusPair,
    strategy: &StrategyConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<PromptBundle, DemoError> {
    strategy.validate()?;
    let bundle = match strategy {
        StrategyConfig::ZeroShotCot => PromptBundle {
            demonstrations: Vec::new(),
            negative_block: None,
            query: query.to_string(),
            template_id: "zero-shot-cot".into(),
        },
        StrategyConfig::SimilarityFewShot { total } => {
            let query_vec = embedder.embed_text(query)?;
            let hits = top_k(&corpora.positives, &query_vec, *total, &BTreeSet::new())?;
            if hits.len() < *total {
                return Err(DemoError::InsufficientCorpus {
                    needed: *total,
                    available: hits.len(),
                });
            }
            PromptBundle {
                demonstrations: hits
                    .iter()
                    .map(|h| {
                        Demonstration::from_record(find_record(&corpora.positives, &h.exemplar_id))
                    })
                    .collect(),
                negative_block: None,
                query: query.to_string(),
                template_id: "qa-cot".into(),
            }
        }
        StrategyConfig::ContrastiveCot { total } => {
            let half = total / 2;
            let query_vec = embedder.embed_text(query)?;
            let pos = top_k(&corpora.positives, &query_vec, half, &BTreeSet::new())?;
            let neg = top_k(&corpora.negatives, &query_vec, half, &BTreeSet::new())?;
            if pos.len() < half || neg.len() < half {
                return Err(DemoError::InsufficientCorpus {
                    needed: half,
                    available: pos.len().min(neg.len()),
                });
            }
            PromptBundle {
                demonstrations: pos
                    .iter()
                    .map(|h| {
                        Demonstration::from_record(find_record(&corpora.positives, &h.exemplar_id))
                    })
                    .collect(),
                negative_block: Some(
                    neg.iter()
                        .map(|h| {
                            Demonstration::from_record(find_record(
                                &corpora.negatives,
                                &h.exemplar_id,
                            ))
                        })
                        .collect(),
                ),
                query: query.to_string(),
                template_id: "contrastive-cot".into(),
            }
        }
        StrategyConfig::RandomFewShot { total, seed } => {
            if corpora.positives.len() < *total {
                return Err(DemoError::InsufficientCorpus {
                    needed: *total,
                    available: corpora.positives.len(),
                });
            }
            // Sample over the id-sorted store so the draw does not depend
            // on file order.
            let mut order: Vec<&ExemplarRecord> = corpora.positives.iter().collect();
            order.sort_by(|a, b| a.id.cmp(&b.id));
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let picks = sample_indices(order.len(), *total, &mut rng);
            PromptBundle {
                demonstrations: picks
                    .into_iter()
                    .map(|i| Demonstration::from_record(order[i]))
                    .collect(),
                negative_block: None,
                query: query.to_string(),
                template_id: "qa-cot".into(),
            }
        }
        StrategyConfig::NegAnchored {
            m,
            n,
            allow_duplicate_anchors,
            anchored_first,
        } => {
            let query_vec = embedder.embed_text(query)?;
            let direct = top_k(&corpora.positives, &query_vec, *m, &BTreeSet::new())?;
            if direct.len() < *m {
                return Err(DemoError::InsufficientCorpus {
                    needed: *m,
                    available: direct.len(),
                });
            }
            let negatives = top_k(&corpora.negatives, &query_vec, *n, &BTreeSet::new())?;
            if negatives.len() < *n {
                return Err(DemoError::InsufficientCorpus {
                    needed: *n,
                    available: negatives.len(),
                });
            }
            let dedup: BTreeSet<String> = direct.iter().map(|h| h.exemplar_id.clone()).collect();
            let anchored = anchor_positives(
                &negatives,
                &corpora.negatives,
                &corpora.positives,
                &dedup,
                *allow_duplicate_anchors,
            )?;
            let direct_demos = direct.iter().map(|h| {
                Demonstration::from_record(find_record(&corpora.positives, &h.exemplar_id))
            });
            let anchored_demos = anchored.iter().map(|a| {
                Demonstration::from_record(find_record(&corpora.positives, &a.positive_id))
            });
            let demonstrations: Vec<Demonstration> = if *anchored_first {
                anchored_demos.chain(direct_demos).collect()
            } else {
                direct_demos.chain(anchored_demos).collect()
            };
            PromptBundle {
                demonstrations,
                negative_block: None,
                query: query.to_string(),
                template_id: "qa-cot".into(),
            }
        }
    };
    Ok(bundle)
}

/// Zero-shot chain-of-thought prompt for a bare question.
pub fn zero_shot_prompt(question: &str) -> String {
    format!("Q: {question}\nA: {COT_TRIGGER}")
}

fn render_answer_body(demo: &Demonstration) -> String {
    let rationale = demo.rationale.trim();
    if rationale.is_empty() {
        format!("The answer is {}.", demo.answer)
    } else {
        format!("{rationale} The answer is {}.", demo.answer)
    }
}

fn render_block(demo: &Demonstration) -> String {
    format!("Q: {}\nA: {}", demo.question, render_answer_body(demo))
}

/// Renders a bundle to the final prompt text. Deterministic; each
/// demonstration becomes `Q: ...\nA: <rationale> The answer is <answer>.`
/// and the query ends with the chain-of-thought trigger.
pub fn render_prompt(bundle: &PromptBundle) -> String {
    let query_part = zero_shot_prompt(&bundle.query);
    if bundle.template_id == "contrastive-cot" {
        let pos_blocks: Vec<String> = bundle.demonstrations.iter().map(render_block).collect();
        let neg_blocks: Vec<String> = bundle
            .negative_block
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .map(render_block)
            .collect();
        let filled = CONTRASTIVE_TEMPLATE
            .replace("[positive example]", &pos_blocks.join("\n\n"))
            .replace("[negative example]", &neg_blocks.join("\n\n"));
        return format!("{filled}\n\n{query_part}");
    }
    let mut out = String::new();
    for demo in &bundle.demonstrations {
        out.push_str(&render_block(demo));
        out.push_str("\n\n");
    }
    out.push_str(&query_part);
    out
}
