//! Negative-anchored demonstration selection for few-shot in-context
//! learning.
//!
//! The library builds positive/negative exemplar corpora from a dataset by
//! running zero-shot chain-of-thought over the training half and comparing
//! predictions to gold answers. At inference time it constructs prompt
//! demonstrations for a query by retrieving direct positives plus positives
//! anchored on the query's most similar negatives, and evaluates those
//! strategies against similarity-only, contrastive, random, and zero-shot
//! baselines.
//!
//! Module map:
//!
//! * [`embedding`] — unit-norm sentence embeddings and cosine similarity
//! * [`clustering`] — seeded k-means and the per-cluster train/test split
//! * [`corpus`] — exemplar corpus construction and JSONL persistence
//! * [`retrieval`] — exact top-k search and negative-anchored retrieval
//! * [`demo_builder`] — strategy configs, bundle assembly, prompt rendering
//! * [`llm_gateway`] — chat completions (remote endpoint or offline oracle)
//! * [`answer_extraction`] — answer cleaning and correctness comparison
//! * [`harness`] — experiment runner, sweeps, reports, synthetic task

pub mod answer_extraction;
pub mod clustering;
pub mod corpus;
pub mod demo_builder;
pub mod embedding;
pub mod harness;
pub mod hashing;
pub mod http;
pub mod llm_gateway;
pub mod retrieval;

pub use answer_extraction::{extract, is_correct, NormalizedAnswer, TaskFamily, TaskFamilyKind};
pub use clustering::{kmeans, split_per_cluster, ClusterAssignment, SplitResult};
pub use corpus::{
    build_corpora, load_corpus, load_dataset, save_corpus, CorpusPair, DatasetItem, ExemplarRecord,
    Polarity, TrainItem,
};
pub use demo_builder::{build, render_prompt, PromptBundle, StrategyConfig};
pub use embedding::{cosine, EmbeddingProvider, EmbeddingVector, ProviderDescriptor};
pub use harness::{run_experiment, sweep_mn, EvalReport, ExperimentConfig, HarnessError};
pub use llm_gateway::{CompletionRequest, Gateway, ScriptedBehavior};
pub use retrieval::{anchor_positives, top_k, AnchoredPositive, RetrievalHit};
