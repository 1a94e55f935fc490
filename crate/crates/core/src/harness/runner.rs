//! End-to-end experiment execution: dataset in, clustered split, corpus
//! build or load, strategy evaluation over the test half, report out.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use super::config::ExperimentConfig;
use super::report::{render_report, EvalReport, ReportFormat, StrategySummary, TraceRow};
use super::HarnessError;
use crate::answer_extraction::{extract, is_correct, ExtractError, NormalizedAnswer};
use crate::clustering::{assign_clusters, split_per_cluster, DEFAULT_MAX_ITERS};
use crate::corpus::{
    build_corpora, load_corpus, load_dataset, save_corpus, BuildOptions, CorpusPair, DatasetItem,
    TrainItem,
};
use crate::demo_builder::{build, render_prompt, PromptBundle, StrategyConfig};
use crate::embedding::EmbeddingProvider;
use crate::hashing::derive_seed;
use crate::llm_gateway::{CompletionRequest, Gateway};

/// Loads the configured corpus if it exists, or builds it from scratch
/// (embed, cluster, split, zero-shot inference) and saves it.
pub fn prepare_corpora(config: &ExperimentConfig) -> Result<CorpusPair, HarnessError> {
    config.validate()?;
    let embedder = config.build_embedder()?;
    let gateway = config.build_gateway()?;
    let dataset = load_dataset(&config.dataset.path)?;
    validate_dataset(&dataset, config)?;
    ensure_corpora(config, &dataset, embedder.as_ref(), &gateway)
}

/// Runs the full experiment described by `config`, writes
/// `report.json`/`report.md` into the output directory, and returns the
/// report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport, HarnessError> {
    let gateway = config.build_gateway()?;
    run_experiment_with_gateway(config, &gateway)
}

/// Like [`run_experiment`] but with a caller-supplied gateway, for custom
/// oracles and fault injection.
pub fn run_experiment_with_gateway(
    config: &ExperimentConfig,
    gateway: &Gateway,
) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let embedder = config.build_embedder()?;
    let dataset = load_dataset(&config.dataset.path)?;
    validate_dataset(&dataset, config)?;

    let corpora = ensure_corpora(config, &dataset, embedder.as_ref(), gateway)?;
    let corpus_ids: BTreeSet<&str> = corpora
        .positives
        .iter()
        .chain(corpora.negatives.iter())
        .map(|r| r.id.as_str())
        .collect();
    let test_items: Vec<&DatasetItem> = dataset
        .iter()
        .filter(|d| !corpus_ids.contains(d.id.as_str()))
        .collect();
    if test_items.is_empty() {
        return Err(HarnessError::Config(
            "test set is empty; corpus covers the whole dataset".into(),
        ));
    }

    let report = evaluate(config, &corpora, &test_items, embedder.as_ref(), gateway)?;
    write_report(&report, &config.output_dir)?;
    Ok(report)
}

/// Runs the (m, n) sweep: negative-anchored strategies for every m from 0
/// to `total`, one report row per combination.
pub fn sweep_mn(config: &ExperimentConfig, total: usize) -> Result<EvalReport, HarnessError> {
    if total == 0 {
        return Err(HarnessError::Config(
            "sweep total must be at least 1".into(),
        ));
    }
    let mut sweep_config = config.clone();
    sweep_config.strategies = (0..=total)
        .map(|m| StrategyConfig::neg_anchored(m, total - m))
        .collect();
    run_experiment(&sweep_config)
}

fn validate_dataset(
    dataset: &[DatasetItem],
    config: &ExperimentConfig,
) -> Result<(), HarnessError> {
    let mut seen = BTreeSet::new();
    for item in dataset {
        if !seen.insert(item.id.as_str()) {
            return Err(HarnessError::Config(format!(
                "duplicate dataset id {}",
                item.id
            )));
        }
        extract(&item.answer, &config.task_family).map_err(|e| {
            HarnessError::Config(format!(
                "gold answer for {} does not normalize: {e}",
                item.id
            ))
        })?;
    }
    if dataset.len() < config.cluster_k {
        return Err(HarnessError::Config(format!(
            "dataset has {} items but cluster_k is {}",
            dataset.len(),
            config.cluster_k
        )));
    }
    Ok(())
}

fn ensure_corpora(
    config: &ExperimentConfig,
    dataset: &[DatasetItem],
    embedder: &dyn EmbeddingProvider,
    gateway: &Gateway,
) -> Result<CorpusPair, HarnessError> {
    let corpus_path = config.corpus_file();
    if corpus_path.exists() {
        let pair = load_corpus(&corpus_path)?;
        if &pair.provider != embedder.descriptor() {
            return Err(HarnessError::Config(format!(
                "corpus {} was built with provider {:?}, config uses {:?}",
                corpus_path.display(),
                pair.provider,
                embedder.descriptor()
            )));
        }
        if pair.task_family != config.task_family {
            return Err(HarnessError::Config(format!(
                "corpus {} has a different task family",
                corpus_path.display()
            )));
        }
        return Ok(pair);
    }

    let mut embedded = Vec::with_capacity(dataset.len());
    for item in dataset {
        let vector = embedder.embed_text(&item.question)?;
        embedded.push((item.id.clone(), vector));
    }
    let (assignments, _) = assign_clusters(
        &embedded,
        config.cluster_k,
        config.seeds.split,
        DEFAULT_MAX_ITERS,
    )?;
    let split = split_per_cluster(&assignments, config.seeds.split)?;
    let cluster_of: BTreeMap<&str, usize> = assignments
        .iter()
        .map(|a| (a.item_id.as_str(), a.cluster))
        .collect();
    let train_items: Vec<TrainItem> = dataset
        .iter()
        .filter(|d| split.train_ids.contains(&d.id))
        .map(|d| TrainItem {
            id: d.id.clone(),
            question: d.question.clone(),
            gold: d.answer.clone(),
            cluster: cluster_of[d.id.as_str()],
        })
        .collect();
    let options = BuildOptions {
        checkpoint_path: Some(corpus_path.with_extension("checkpoint.jsonl")),
        checkpoint_every: 20,
    };
    if let Some(parent) = corpus_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                HarnessError::Config(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    let pair = build_corpora(
        &train_items,
        gateway,
        embedder,
        &config.task_family,
        &config.dataset.name,
        config.seeds.split,
        &options,
    )?;
    save_corpus(&pair, &corpus_path)?;
    Ok(pair)
}

/// Per-item evaluation state threaded through bundle building, completion,
/// and scoring.
struct PendingEval {
    query_id: String,
    bundle: Option<PromptBundle>,
    fallback: bool,
    failure: Option<String>,
}

fn evaluate(
    config: &ExperimentConfig,
    corpora: &CorpusPair,
    test_items: &[&DatasetItem],
    embedder: &dyn EmbeddingProvider,
    gateway: &Gateway,
) -> Result<EvalReport, HarnessError> {
    let mut summaries = Vec::with_capacity(config.strategies.len());
    let mut traces: Vec<TraceRow> = Vec::with_capacity(config.strategies.len() * test_items.len());

    let golds: BTreeMap<&str, NormalizedAnswer> = test_items
        .iter()
        .map(|item| {
            let gold =
                extract(&item.answer, &config.task_family).expect("gold answers validated upfront");
            (item.id.as_str(), gold)
        })
        .collect();

    for strategy in &config.strategies {
        let name = strategy.display_name();
        let mut pending: Vec<PendingEval> = Vec::with_capacity(test_items.len());
        for item in test_items {
            let (effective, fallback) = effective_strategy(strategy, corpora, &item.id);
            match build(&item.question, corpora, &effective, embedder) {
                Ok(bundle) => pending.push(PendingEval {
                    query_id: item.id.clone(),
                    bundle: Some(bundle),
                    fallback,
                    failure: None,
                }),
                Err(e) => pending.push(PendingEval {
                    query_id: item.id.clone(),
                    bundle: None,
                    fallback,
                    failure: Some(format!("bundle: {e}")),
                }),
            }
        }

        let mut requests = Vec::new();
        let mut request_owner = Vec::new();
        let mut render_failures: Vec<(usize, String)> = Vec::new();
        for (idx, p) in pending.iter().enumerate() {
            if let Some(bundle) = &p.bundle {
                let prompt = render_prompt(bundle);
                match CompletionRequest::new(prompt, gateway.model_name().to_string()) {
                    Ok(request) => {
                        requests.push(request);
                        request_owner.push(idx);
                    }
                    Err(e) => {
                        // Unreachable with non-empty queries; recorded as a
                        // per-item failure all the same.
                        render_failures.push((idx, format!("render: {e}")));
                    }
                }
            }
        }
        for (idx, reason) in render_failures {
            pending[idx].failure = Some(reason);
        }
        let responses = gateway.complete_batch(&requests);
        let mut response_of: BTreeMap<usize, Result<String, String>> = BTreeMap::new();
        for (owner, response) in request_owner.into_iter().zip(responses) {
            response_of.insert(owner, response.map_err(|e| e.to_string()));
        }

        let mut correct_count = 0usize;
        let mut extraction_failures = 0usize;
        let mut fallbacks = 0usize;
        let mut faults = 0usize;
        for (idx, p) in pending.iter().enumerate() {
            let gold = &golds[p.query_id.as_str()];
            let demonstration_ids: Vec<String> = p
                .bundle
                .as_ref()
                .map(|b| {
                    b.demonstrations
                        .iter()
                        .map(|d| d.exemplar_id.clone())
                        .collect()
                })
                .unwrap_or_default();
            let mut row = TraceRow {
                query_id: p.query_id.clone(),
                strategy: name.clone(),
                demonstration_ids,
                raw_output: String::new(),
                extracted: None,
                correct: false,
                flagged: p.fallback,
                flag_reason: if p.fallback {
                    Some("fallback: empty negative store, used m+n direct positives".into())
                } else {
                    None
                },
            };
            if p.fallback {
                fallbacks += 1;
            }
            let failure = p.failure.clone().or_else(|| match response_of.get(&idx) {
                Some(Ok(_)) | None => None,
                Some(Err(e)) => Some(format!("completion: {e}")),
            });
            if let Some(reason) = failure {
                faults += 1;
                row.flagged = true;
                row.flag_reason = Some(reason);
            } else if let Some(Ok(text)) = response_of.get(&idx) {
                row.raw_output = text.clone();
                match extract(text, &config.task_family) {
                    Ok(answer) => {
                        row.correct = is_correct(&answer, gold).unwrap_or(false);
                        row.extracted = Some(answer.value);
                    }
                    Err(ExtractError::NoAnswerFound(_)) => {
                        extraction_failures += 1;
                    }
                    Err(e) => {
                        faults += 1;
                        row.flagged = true;
                        row.flag_reason = Some(format!("extract: {e}"));
                    }
                }
            }
            if row.correct {
                correct_count += 1;
            }
            traces.push(row);
        }

        summaries.push(StrategySummary {
            name,
            accuracy: correct_count as f64 / test_items.len() as f64,
            correct: correct_count,
            total: test_items.len(),
            extraction_failures,
            fallbacks,
            faults,
        });
    }

    traces.sort_by(|a, b| {
        a.query_id
            .cmp(&b.query_id)
            .then_with(|| a.strategy.cmp(&b.strategy))
    });
    Ok(EvalReport {
        dataset: config.dataset.name.clone(),
        strategies: summaries,
        traces,
        config: serde_json::to_value(config).expect("config serializes"),
        created_at_ms: now_ms(),
    })
}

/// Applies the empty-negative-store fallback: a negative-anchored strategy
/// that needs anchors but has none available degrades to all-direct
/// retrieval and the trace row is flagged.
fn effective_strategy(
    strategy: &StrategyConfig,
    corpora: &CorpusPair,
    item_id: &str,
) -> (StrategyConfig, bool) {
    match strategy {
        StrategyConfig::NegAnchored { m, n, .. } if *n > 0 && corpora.negatives.is_empty() => {
            (StrategyConfig::neg_anchored(m + n, 0), true)
        }
        StrategyConfig::RandomFewShot { total, seed } => (
            StrategyConfig::RandomFewShot {
                total: *total,
                seed: derive_seed(*seed, item_id),
            },
            false,
        ),
        other => (other.clone(), false),
    }
}

/// Writes `report.json` and `report.md` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)
        .map_err(|e| HarnessError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(dir.join("report.json"), json)
        .map_err(|e| HarnessError::Config(format!("cannot write report.json: {e}")))?;
    let md = render_report(report, ReportFormat::Markdown);
    fs::write(dir.join("report.md"), md)
        .map_err(|e| HarnessError::Config(format!("cannot write report.md: {e}")))?;
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
