//! End-to-end tests driving the compiled `neganchor` binary.

use std::path::Path;
use std::process::{Command, Output};

fn neganchor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neganchor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn path_str(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

#[test]
fn synth_eval_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("task");

    let synth = neganchor(&["synth", "--seed", "7", "--out", &path_str(&out_dir)]);
    assert!(
        synth.status.success(),
        "{}",
        String::from_utf8_lossy(&synth.stderr)
    );
    assert!(out_dir.join("config.json").exists());
    assert!(out_dir.join("dataset.jsonl").exists());
    assert!(out_dir.join("embeddings.jsonl").exists());
    assert!(out_dir.join("threshold_oracle.json").exists());

    let config = path_str(&out_dir.join("config.json"));
    let eval = neganchor(&["eval", "--config", &config]);
    assert!(
        eval.status.success(),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    let table = stdout(&eval);
    assert!(table.contains("| strategy | synthetic-7 |"));
    assert!(table.contains("neg-anchored(m=1,n=1)"));

    let report_path = out_dir.join("out").join("report.json");
    assert!(report_path.exists());

    let md = neganchor(&["report", &path_str(&report_path)]);
    assert!(md.status.success());
    assert!(stdout(&md).contains("| zero-shot-cot |"));

    let csv = neganchor(&["report", &path_str(&report_path), "--format", "csv"]);
    assert!(csv.status.success());
    assert!(stdout(&csv).starts_with("strategy,synthetic-7"));
}

#[test]
fn eval_with_strategy_filter() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("task");
    neganchor(&["synth", "--seed", "11", "--out", &path_str(&out_dir)]);
    let config = path_str(&out_dir.join("config.json"));

    let eval = neganchor(&["eval", "--config", &config, "--strategy", "zero-shot-cot"]);
    assert!(eval.status.success());
    let table = stdout(&eval);
    assert!(table.contains("zero-shot-cot"));
    assert!(!table.contains("similarity-few-shot"));

    let missing = neganchor(&["eval", "--config", &config, "--strategy", "nope"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn build_corpus_then_eval_reuses_it() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("task");
    neganchor(&["synth", "--seed", "3", "--out", &path_str(&out_dir)]);
    let config = path_str(&out_dir.join("config.json"));

    let build = neganchor(&["build-corpus", "--config", &config]);
    assert!(
        build.status.success(),
        "{}",
        String::from_utf8_lossy(&build.stderr)
    );
    assert!(stdout(&build).contains("corpus written"));
    let corpus_path = out_dir.join("out").join("corpus.jsonl");
    assert!(corpus_path.exists());
    let before = std::fs::read_to_string(&corpus_path).unwrap();

    // Rebuilding is refused while the corpus exists.
    let again = neganchor(&["build-corpus", "--config", &config]);
    assert_eq!(again.status.code(), Some(2));

    // Eval loads the existing corpus without rebuilding it.
    let eval = neganchor(&["eval", "--config", &config]);
    assert!(eval.status.success());
    let after = std::fs::read_to_string(&corpus_path).unwrap();
    assert_eq!(before, after);
}

#[test]
fn sweep_emits_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("task");
    neganchor(&["synth", "--seed", "5", "--out", &path_str(&out_dir)]);
    let config = path_str(&out_dir.join("config.json"));

    let sweep = neganchor(&["sweep", "--total", "2", "--config", &config]);
    assert!(
        sweep.status.success(),
        "{}",
        String::from_utf8_lossy(&sweep.stderr)
    );
    let table = stdout(&sweep);
    for (m, n) in [(0, 2), (1, 1), (2, 0)] {
        assert!(
            table.contains(&format!("neg-anchored(m={m},n={n})")),
            "missing row ({m},{n}) in:\n{table}"
        );
    }
}

#[test]
fn shipped_example_configs_parse() {
    let configs_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs_dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let config: neganchor_core::ExperimentConfig =
            serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.validate().unwrap();
        seen += 1;
    }
    assert!(seen >= 2, "expected example configs in {configs_dir:?}");
}

#[test]
fn partial_runs_exit_four() {
    // An all-correct corpus has no negatives, so a strategy that needs
    // anchors falls back and flags every row: exit code 4.
    let dir = tempfile::tempdir().unwrap();
    let items: Vec<serde_json::Value> = (0..12)
        .map(|i| {
            serde_json::json!({
                "id": format!("item-{i:03}"),
                "question": format!("What is {i} plus {i}?"),
                "answer": format!("{}", 2 * i),
            })
        })
        .collect();
    let dataset: String = items.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(dir.path().join("dataset.jsonl"), dataset).unwrap();
    let rules: Vec<serde_json::Value> = (0..12)
        .map(|i| {
            serde_json::json!({
                "substring": format!("Q: What is {i} plus {i}?\nA: Let's think step by step."),
                "response": format!("Working through it gives {0}. The answer is {0}.", 2 * i),
            })
        })
        .collect();
    std::fs::write(
        dir.path().join("script.json"),
        serde_json::json!({ "rules": rules, "default": "The answer is 0." }).to_string(),
    )
    .unwrap();
    let config = serde_json::json!({
        "dataset": { "path": dir.path().join("dataset.jsonl"), "name": "toy" },
        "task_family": { "kind": "numeric" },
        "cluster_k": 2,
        "seeds": { "split": 5 },
        "strategies": [ { "kind": "neg_anchored", "m": 1, "n": 1 } ],
        "embedding_provider": { "kind": "trigram", "dim": 32 },
        "llm": { "kind": "scripted", "path": dir.path().join("script.json") },
        "output_dir": dir.path().join("out"),
    });
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let eval = neganchor(&["eval", "--config", &path_str(&config_path)]);
    assert_eq!(
        eval.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    assert!(String::from_utf8_lossy(&eval.stderr).contains("partial run"));
}

#[test]
fn config_errors_exit_two() {
    let missing = neganchor(&["eval", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let parse = neganchor(&["eval", "--config", &path_str(&bad)]);
    assert_eq!(parse.status.code(), Some(2));
}

#[test]
fn remote_without_api_key_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("task");
    neganchor(&["synth", "--seed", "9", "--out", &path_str(&out_dir)]);

    // Rewrite the config to use a remote gateway with an unset key env.
    let config_path = out_dir.join("config.json");
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&config_path).unwrap()).unwrap();
    config["llm"] = serde_json::json!({
        "kind": "remote",
        "endpoint": "http://127.0.0.1:1/v1/chat/completions",
        "model": "test-model",
        "timeout_secs": 1,
        "retries": 0,
        "backoff_base_ms": 0,
        "api_key_env": "NEGANCHOR_KEY_THAT_IS_NEVER_SET"
    });
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let eval = neganchor(&["eval", "--config", &path_str(&config_path)]);
    assert_eq!(
        eval.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
}
