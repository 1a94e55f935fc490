//! Harness-level integration: forced-accuracy runs, per-item fault
//! isolation, fallback behavior, and the golden synthetic report.

use std::sync::Arc;

use neganchor_core::answer_extraction::TaskFamily;
use neganchor_core::corpus::DatasetItem;
use neganchor_core::demo_builder::StrategyConfig;
use neganchor_core::harness::{
    generate_synthetic_task, render_report, run_experiment, ExperimentConfig, ReportFormat,
    SynthParams,
};
use neganchor_core::harness::{DatasetConfig, EmbeddingProviderConfig, LlmConfig, Seeds};
use neganchor_core::llm_gateway::{GatewayError, PromptOracle};

/// Writes a small arithmetic dataset plus a scripted-gateway JSON file
/// where every question is answered with `answer_of(question)`.
fn write_fixture_experiment(
    dir: &std::path::Path,
    n: usize,
    answer_of: impl Fn(&DatasetItem) -> String,
    strategies: Vec<StrategyConfig>,
) -> ExperimentConfig {
    let items: Vec<DatasetItem> = (0..n)
        .map(|i| DatasetItem {
            id: format!("item-{i:03}"),
            question: format!("What is {i} plus {i}?"),
            answer: format!("{}", 2 * i),
        })
        .collect();
    let mut dataset_text = String::new();
    for item in &items {
        dataset_text.push_str(&serde_json::to_string(item).unwrap());
        dataset_text.push('\n');
    }
    std::fs::write(dir.join("dataset.jsonl"), dataset_text).unwrap();

    // Rules key on the query rendering (question + trigger), which is
    // unique to the query position; a bare question would also match
    // demonstration blocks inside few-shot prompts.
    let rules: Vec<serde_json::Value> = items
        .iter()
        .map(|item| {
            serde_json::json!({
                "substring": format!("Q: {}\nA: Let's think step by step.", item.question),
                "response": format!("Sure. Working it through carefully gives {0}. The answer is {0}.", answer_of(item)),
            })
        })
        .collect();
    let script = serde_json::json!({ "rules": rules, "default": "The answer is 0." });
    std::fs::write(
        dir.join("script.json"),
        serde_json::to_string_pretty(&script).unwrap(),
    )
    .unwrap();

    ExperimentConfig {
        dataset: DatasetConfig {
            path: dir.join("dataset.jsonl"),
            name: "toy".into(),
        },
        task_family: TaskFamily::numeric(),
        cluster_k: 2,
        seeds: Seeds {
            split: 5,
            random_baseline: 9,
            synthetic: 0,
        },
        strategies,
        embedding_provider: EmbeddingProviderConfig::Trigram { dim: 32 },
        llm: LlmConfig::Scripted {
            path: dir.join("script.json"),
        },
        corpus_path: None,
        output_dir: dir.join("out"),
        max_in_flight: 4,
        call_log_path: None,
    }
}

#[test]
fn all_correct_mock_scores_one_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture_experiment(
        dir.path(),
        16,
        |item| item.answer.clone(),
        vec![
            StrategyConfig::ZeroShotCot,
            StrategyConfig::SimilarityFewShot { total: 2 },
            StrategyConfig::RandomFewShot { total: 2, seed: 3 },
            StrategyConfig::neg_anchored(2, 0),
        ],
    );
    let report = run_experiment(&config).unwrap();
    for s in &report.strategies {
        assert_eq!(s.accuracy, 1.0, "{}", s.name);
        assert_eq!(s.correct, s.total);
    }
    assert_eq!(report.flagged_count(), 0);
    // One trace row per (test item, strategy) pair, sorted.
    let test_total = report.strategies[0].total;
    assert_eq!(report.traces.len(), test_total * report.strategies.len());
    for w in report.traces.windows(2) {
        assert!(
            (&w[0].query_id, &w[0].strategy) < (&w[1].query_id, &w[1].strategy),
            "trace rows out of order"
        );
    }
}

#[test]
fn all_wrong_mock_scores_zero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture_experiment(
        dir.path(),
        16,
        |_| "-777".to_string(),
        vec![
            StrategyConfig::ZeroShotCot,
            StrategyConfig::SimilarityFewShot { total: 2 },
            StrategyConfig::neg_anchored(1, 1),
        ],
    );
    let report = run_experiment(&config).unwrap();
    for s in &report.strategies {
        assert_eq!(s.accuracy, 0.0, "{}", s.name);
    }
}

#[test]
fn neg_anchored_falls_back_when_negative_store_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture_experiment(
        dir.path(),
        16,
        |item| item.answer.clone(), // all correct: no negatives at all
        vec![
            StrategyConfig::neg_anchored(1, 1),
            StrategyConfig::SimilarityFewShot { total: 2 },
        ],
    );
    let report = run_experiment(&config).unwrap();
    let na = &report.strategies[0];
    assert_eq!(na.fallbacks, na.total);
    assert_eq!(na.accuracy, 1.0);
    // Fallback makes the strategy equivalent to the similarity baseline.
    let na_rows: Vec<_> = report
        .traces
        .iter()
        .filter(|t| t.strategy == na.name)
        .collect();
    let sim_rows: Vec<_> = report
        .traces
        .iter()
        .filter(|t| t.strategy == report.strategies[1].name)
        .collect();
    for (a, b) in na_rows.iter().zip(sim_rows.iter()) {
        assert_eq!(a.demonstration_ids, b.demonstration_ids, "{}", a.query_id);
        assert!(a.flagged);
    }
    assert!(report.flagged_count() > 0);
}

/// Scripted oracle that fails on exactly one query's zero-shot rendering.
struct FaultInjector {
    fail_marker: String,
    inner: neganchor_core::llm_gateway::ScriptedBehavior,
}

impl PromptOracle for FaultInjector {
    fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
        if prompt.ends_with(&self.fail_marker) {
            return Err(GatewayError::Transport("injected fault".into()));
        }
        self.inner.respond(prompt)
    }

    fn oracle_id(&self) -> &str {
        "fault-injector"
    }
}

#[test]
fn single_item_fault_changes_exactly_one_row() {
    use neganchor_core::clustering::{assign_clusters, split_per_cluster, DEFAULT_MAX_ITERS};
    use neganchor_core::corpus::{build_corpora, save_corpus, BuildOptions, TrainItem};
    use neganchor_core::embedding::{EmbeddingProvider, TrigramHashProvider};
    use neganchor_core::llm_gateway::{Gateway, ScriptedBehavior};

    let dir = tempfile::tempdir().unwrap();
    let config = write_fixture_experiment(
        dir.path(),
        16,
        |item| item.answer.clone(),
        vec![StrategyConfig::SimilarityFewShot { total: 2 }],
    );

    // Build the corpus once so both runs share it byte for byte.
    let dataset = neganchor_core::corpus::load_dataset(&config.dataset.path).unwrap();
    let embedder = TrigramHashProvider::new(32);
    let embedded: Vec<(String, neganchor_core::embedding::EmbeddingVector)> = dataset
        .iter()
        .map(|d| (d.id.clone(), embedder.embed_text(&d.question).unwrap()))
        .collect();
    let (assignments, _) = assign_clusters(
        &embedded,
        config.cluster_k,
        config.seeds.split,
        DEFAULT_MAX_ITERS,
    )
    .unwrap();
    let split = split_per_cluster(&assignments, config.seeds.split).unwrap();
    let cluster_of: std::collections::BTreeMap<&str, usize> = assignments
        .iter()
        .map(|a| (a.item_id.as_str(), a.cluster))
        .collect();
    let train: Vec<TrainItem> = dataset
        .iter()
        .filter(|d| split.train_ids.contains(&d.id))
        .map(|d| TrainItem {
            id: d.id.clone(),
            question: d.question.clone(),
            gold: d.answer.clone(),
            cluster: cluster_of[d.id.as_str()],
        })
        .collect();
    let mut behavior = ScriptedBehavior::new("The answer is 0.");
    for d in &dataset {
        behavior = behavior.rule_substring(
            format!("Q: {}\nA: Let's think step by step.", d.question),
            format!(
                "Sure. Working it through carefully gives {0}. The answer is {0}.",
                d.answer
            ),
        );
    }
    let gateway = Gateway::scripted(behavior.clone());
    let pair = build_corpora(
        &train,
        &gateway,
        &embedder,
        &config.task_family,
        "toy",
        5,
        &BuildOptions::default(),
    )
    .unwrap();
    save_corpus(&pair, &config.corpus_file()).unwrap();

    let victim = dataset
        .iter()
        .find(|d| split.test_ids.contains(&d.id))
        .unwrap();

    let clean = run_experiment(&config).unwrap();

    // Rerun with a gateway that fails on the victim's query rendering,
    // sharing the prebuilt corpus.
    let mut faulty_config = config.clone();
    faulty_config.corpus_path = Some(config.corpus_file());
    faulty_config.output_dir = dir.path().join("out-faulty");
    let injector = Arc::new(FaultInjector {
        fail_marker: format!("Q: {}\nA: Let's think step by step.", victim.question),
        inner: behavior,
    });
    let report_faulty = neganchor_core::harness::run_experiment_with_gateway(
        &faulty_config,
        &Gateway::oracle(injector),
    )
    .unwrap();

    let flagged: Vec<_> = report_faulty.traces.iter().filter(|t| t.flagged).collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0].query_id, victim.id);
    assert!(!flagged[0].correct);

    let total = clean.strategies[0].total;
    assert_eq!(clean.strategies[0].correct, total);
    assert_eq!(report_faulty.strategies[0].correct, total - 1);
    let delta = clean.strategies[0].accuracy - report_faulty.strategies[0].accuracy;
    assert!((delta - 1.0 / total as f64).abs() < 1e-12);

    // Every other row is unchanged.
    let mut diffs = 0;
    for (a, b) in clean.traces.iter().zip(report_faulty.traces.iter()) {
        assert_eq!(a.query_id, b.query_id);
        if a.correct != b.correct || a.flagged != b.flagged {
            diffs += 1;
        }
    }
    assert_eq!(diffs, 1);
}

#[test]
fn synthetic_reference_report_matches_golden_markdown() {
    let params = SynthParams::reference(7);
    let task = generate_synthetic_task(&params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = task.write_to_dir(dir.path(), &params).unwrap();
    let report = run_experiment(&config).unwrap();
    let md = render_report(&report, ReportFormat::Markdown);
    let golden = include_str!("fixtures/golden_synthetic_report.md");
    assert_eq!(md, golden);
    let on_disk = std::fs::read_to_string(config.output_dir.join("report.md")).unwrap();
    assert_eq!(on_disk, golden);
}

#[test]
fn single_concept_synthetic_scores_identically_across_strategies() {
    let params = SynthParams {
        seed: 3,
        n_items: 12,
        dim: 4,
        n_concepts: 1,
        theta: 0.8,
        n_hard: 2,
    };
    let task = generate_synthetic_task(&params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut config = task.write_to_dir(dir.path(), &params).unwrap();
    // No hard concepts means no negatives; drop the contrastive strategy,
    // which requires a populated negative store.
    config.strategies = vec![
        StrategyConfig::ZeroShotCot,
        StrategyConfig::SimilarityFewShot { total: 2 },
        StrategyConfig::neg_anchored(1, 1),
        StrategyConfig::neg_anchored(0, 2),
    ];
    let report = run_experiment(&config).unwrap();
    let first = report.strategies[0].accuracy;
    for s in &report.strategies {
        assert_eq!(s.accuracy, first, "{}", s.name);
    }
}
