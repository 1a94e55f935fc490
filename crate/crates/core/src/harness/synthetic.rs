//! Synthetic task generator for offline end-to-end validation.
//!
//! Items are drawn from Gaussian concept clusters on the unit sphere, each
//! concept carrying a fixed gold answer. A subset of concepts is "hard":
//! their upstream items answer wrong under zero-shot prompting and so
//! populate the negative corpus, while their worked-example items sit at an
//! angle where cross-concept decoys outrank them for direct retrieval. The
//! hard concept's negatives are placed between the two, so anchored
//! retrieval recovers the worked examples that similarity-only retrieval
//! misses.
//!
//! Completions come from a threshold oracle: a few-shot prompt is answered
//! correctly iff it contains a demonstration whose embedding similarity to
//! the query exceeds theta *and* whose displayed answer equals the query's
//! gold answer. Zero-shot prompts follow the per-item wrongness schedule.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::config::{
    save_fixed_map, DatasetConfig, EmbeddingProviderConfig, ExperimentConfig, LlmConfig, Seeds,
};
use super::HarnessError;
use crate::answer_extraction::TaskFamily;
use crate::corpus::DatasetItem;
use crate::demo_builder::{StrategyConfig, COT_TRIGGER};
use crate::llm_gateway::{GatewayError, PromptOracle};

/// Geometry constants (degrees): tilt of upstream item positions out of
/// the concept plane, in-plane angles of the bridge negatives, the worked
/// examples, and the decoy concept.
const UPSTREAM_TILT_DEG: f64 = 18.0;
const BRIDGE_ANGLE_DEG: f64 = -13.0;
const WORKED_ANGLE_DEG: f64 = -26.0;
const DECOY_ANGLE_DEG: f64 = 18.0;
/// Per-coordinate Gaussian noise added before renormalization.
const NOISE_SIGMA: f64 = 0.01;

pub const SYNTH_WRONG_ANSWER: &str = "-1";

/// Generator parameters. `reference(7)` reproduces the committed offline
/// validation instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_items: usize,
    pub dim: usize,
    pub n_concepts: usize,
    pub theta: f64,
    pub n_hard: usize,
}

impl SynthParams {
    pub fn reference(seed: u64) -> Self {
        Self {
            seed,
            n_items: 120,
            dim: 32,
            n_concepts: 6,
            theta: 0.8,
            n_hard: 2,
        }
    }
}

/// Role of an item inside a hard concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthRole {
    /// Easy-concept item.
    Easy,
    /// Hard upstream item: wrong under zero-shot, geometrically near the
    /// decoy concept.
    Upstream,
    /// Hard bridge item: wrong under zero-shot, placed between upstream
    /// and worked regions.
    Bridge,
    /// Hard worked example: right under zero-shot, recoverable only via
    /// the bridge negatives.
    Worked,
}

/// Everything the offline pipeline needs: the dataset, a fixed embedding
/// table, the completion oracle, and per-item metadata for verification.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub dataset: Vec<DatasetItem>,
    pub embeddings: BTreeMap<String, Vec<f64>>,
    pub script: ThresholdScript,
    pub concepts: BTreeMap<String, usize>,
    pub roles: BTreeMap<String, SynthRole>,
}

/// Serializable oracle state: threshold, answer key, embedding table, and
/// the zero-shot wrongness schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdScript {
    pub theta: f64,
    pub wrong_answer: String,
    pub answers: BTreeMap<String, String>,
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub zero_shot_wrong: BTreeSet<String>,
}

/// Standard normal via Box-Muller, driven by the seeded RNG.
fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

struct ConceptLayout {
    /// Index of the hard-plane this concept participates in, if any.
    plane: Option<usize>,
    /// Axis index for standalone easy concepts.
    axis: usize,
    hard: bool,
}

fn role_counts(per_concept: usize) -> (usize, usize, usize) {
    let mut upstream = (2 * per_concept / 5) & !1; // even: upstream items pair up
    if upstream < 2 {
        upstream = 2;
    }
    let mut bridge = (3 * per_concept / 10).max(1);
    if upstream + bridge >= per_concept {
        bridge = 1;
    }
    let worked = per_concept - upstream - bridge;
    (upstream, bridge, worked)
}

/// Generates the synthetic dataset, embedding table, and threshold oracle.
pub fn generate_synthetic_task(params: &SynthParams) -> Result<SyntheticTask, HarnessError> {
    if params.n_concepts == 0 {
        return Err(HarnessError::ParameterInvalid(
            "n_concepts must be at least 1".into(),
        ));
    }
    if params.n_items < 4 * params.n_concepts {
        return Err(HarnessError::ParameterInvalid(format!(
            "n_items must be at least 4 * n_concepts = {}",
            4 * params.n_concepts
        )));
    }
    if !(0.0..1.0).contains(&params.theta) {
        return Err(HarnessError::ParameterInvalid(
            "theta must lie in [0, 1)".into(),
        ));
    }
    let n_hard = params.n_hard.min(params.n_concepts / 2);
    let n_standalone = params.n_concepts - 2 * n_hard;
    let dims_needed = 4 * n_hard + n_standalone;
    if params.dim < dims_needed {
        return Err(HarnessError::ParameterInvalid(format!(
            "dim must be at least {dims_needed} for {} concepts with {n_hard} hard",
            params.n_concepts
        )));
    }

    // Concept layout: hard concept i occupies plane i together with its
    // decoy partner (concept i); the remaining concepts get their own axis.
    // Hard concepts are the last `n_hard` indices.
    let mut layouts = Vec::with_capacity(params.n_concepts);
    let mut standalone_seen = 0usize;
    for c in 0..params.n_concepts {
        let hard_start = params.n_concepts - n_hard;
        if c >= hard_start {
            layouts.push(ConceptLayout {
                plane: Some(c - hard_start),
                axis: 0,
                hard: true,
            });
        } else if c < n_hard {
            // Decoy partner of hard plane c.
            layouts.push(ConceptLayout {
                plane: Some(c),
                axis: 0,
                hard: false,
            });
        } else {
            layouts.push(ConceptLayout {
                plane: None,
                axis: 4 * n_hard + standalone_seen,
                hard: false,
            });
            standalone_seen += 1;
        }
    }

    let plane_axes = |plane: usize| -> (usize, usize, usize, usize) {
        (4 * plane, 4 * plane + 1, 4 * plane + 2, 4 * plane + 3)
    };

    let tilt = UPSTREAM_TILT_DEG.to_radians();
    let bridge = BRIDGE_ANGLE_DEG.to_radians();
    let worked = WORKED_ANGLE_DEG.to_radians();
    let decoy = DECOY_ANGLE_DEG.to_radians();

    // Per-concept item counts (round-robin distribution).
    let mut per_concept = vec![params.n_items / params.n_concepts; params.n_concepts];
    for count in per_concept
        .iter_mut()
        .take(params.n_items % params.n_concepts)
    {
        *count += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut dataset = Vec::with_capacity(params.n_items);
    let mut embeddings = BTreeMap::new();
    let mut answers = BTreeMap::new();
    let mut zero_shot_wrong = BTreeSet::new();
    let mut concepts = BTreeMap::new();
    let mut roles = BTreeMap::new();
    let mut within = vec![0usize; params.n_concepts];

    for i in 0..params.n_items {
        let c = i % params.n_concepts;
        let idx = within[c];
        within[c] += 1;
        let layout = &layouts[c];
        let gold = format!("{}", (c + 1) * 7);

        let mut direction = vec![0.0f64; params.dim];
        let role = if layout.hard {
            let (u, v, w1, w2) = plane_axes(layout.plane.unwrap());
            let (n_up, n_bridge, _) = role_counts(per_concept[c]);
            if idx < n_up {
                // Paired upstream positions tilted out of the plane.
                let position = idx / 2;
                let phi = position as f64 * std::f64::consts::FRAC_PI_2;
                direction[u] = tilt.cos();
                direction[w1] = tilt.sin() * phi.cos();
                direction[w2] = tilt.sin() * phi.sin();
                SynthRole::Upstream
            } else if idx < n_up + n_bridge {
                direction[u] = bridge.cos();
                direction[v] = bridge.sin();
                SynthRole::Bridge
            } else {
                direction[u] = worked.cos();
                direction[v] = worked.sin();
                SynthRole::Worked
            }
        } else if let Some(plane) = layout.plane {
            let (u, v, _, _) = plane_axes(plane);
            direction[u] = decoy.cos();
            direction[v] = decoy.sin();
            SynthRole::Easy
        } else {
            direction[layout.axis] = 1.0;
            SynthRole::Easy
        };

        let noisy: Vec<f64> = direction
            .iter()
            .map(|x| x + NOISE_SIGMA * sample_normal(&mut rng))
            .collect();
        let vector = normalize(noisy);

        let id = format!("synth-{i:04}");
        let question = format!("synthetic question {i:04} about concept {c}");
        if matches!(role, SynthRole::Upstream | SynthRole::Bridge) {
            zero_shot_wrong.insert(question.clone());
        }
        embeddings.insert(question.clone(), vector);
        answers.insert(question.clone(), gold.clone());
        concepts.insert(id.clone(), c);
        roles.insert(id.clone(), role);
        dataset.push(DatasetItem {
            id,
            question,
            answer: gold,
        });
    }

    let script = ThresholdScript {
        theta: params.theta,
        wrong_answer: SYNTH_WRONG_ANSWER.to_string(),
        answers,
        vectors: embeddings.clone(),
        zero_shot_wrong,
    };
    Ok(SyntheticTask {
        dataset,
        embeddings,
        script,
        concepts,
        roles,
    })
}

impl SyntheticTask {
    /// Writes dataset, embedding table, oracle, and a ready-to-run
    /// experiment config into `dir`.
    pub fn write_to_dir(
        &self,
        dir: &Path,
        params: &SynthParams,
    ) -> Result<ExperimentConfig, HarnessError> {
        fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Config(format!("cannot create {}: {e}", dir.display())))?;
        let dataset_path = dir.join("dataset.jsonl");
        let mut out = String::new();
        for item in &self.dataset {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        fs::write(&dataset_path, out)
            .map_err(|e| HarnessError::Config(format!("cannot write dataset: {e}")))?;

        let embeddings_path = dir.join("embeddings.jsonl");
        save_fixed_map(&self.embeddings, &embeddings_path)?;

        let oracle_path = dir.join("threshold_oracle.json");
        fs::write(
            &oracle_path,
            serde_json::to_string_pretty(&self.script).expect("script serializes"),
        )
        .map_err(|e| HarnessError::Config(format!("cannot write oracle: {e}")))?;

        let config = ExperimentConfig {
            dataset: DatasetConfig {
                path: dataset_path,
                name: format!("synthetic-{}", params.seed),
            },
            task_family: TaskFamily::numeric(),
            cluster_k: params.n_concepts,
            seeds: Seeds {
                split: params.seed,
                random_baseline: params.seed,
                synthetic: params.seed,
            },
            strategies: vec![
                StrategyConfig::ZeroShotCot,
                StrategyConfig::SimilarityFewShot { total: 2 },
                StrategyConfig::ContrastiveCot { total: 2 },
                StrategyConfig::neg_anchored(1, 1),
                StrategyConfig::neg_anchored(0, 2),
            ],
            embedding_provider: EmbeddingProviderConfig::FixedMap {
                path: dir.join("embeddings.jsonl"),
            },
            llm: LlmConfig::Threshold {
                path: dir.join("threshold_oracle.json"),
            },
            corpus_path: None,
            output_dir: dir.join("out"),
            max_in_flight: 4,
            call_log_path: None,
        };
        let config_path = dir.join("config.json");
        fs::write(
            &config_path,
            serde_json::to_string_pretty(&config).expect("config serializes"),
        )
        .map_err(|e| HarnessError::Config(format!("cannot write config: {e}")))?;
        Ok(config)
    }
}

/// Completion oracle over rendered prompts. Parses out the query and any
/// demonstrations, then applies the threshold rule described at module
/// level.
pub struct ThresholdOracle {
    script: ThresholdScript,
}

impl ThresholdOracle {
    pub fn new(script: ThresholdScript) -> Self {
        Self { script }
    }

    fn answer_of(a_line: &str) -> Option<&str> {
        let re = answer_regex();
        re.captures_iter(a_line)
            .last()
            .map(|c| c.get(1).unwrap().as_str())
    }
}

fn qa_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Q: ([^\n]*)\nA: ([^\n]*)").unwrap())
}

fn answer_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"The answer is ([^.]*)\.").unwrap())
}

impl PromptOracle for ThresholdOracle {
    fn respond(&self, prompt: &str) -> Result<String, GatewayError> {
        let pairs: Vec<(String, String)> = qa_regex()
            .captures_iter(prompt)
            .map(|c| (c[1].to_string(), c[2].to_string()))
            .collect();
        let Some((query, _)) = pairs.last() else {
            return Ok(format!(
                "{COT_TRIGGER} I cannot find a question. The answer is {}.",
                self.script.wrong_answer
            ));
        };
        let Some(gold) = self.script.answers.get(query) else {
            return Ok(format!(
                "{COT_TRIGGER} This question is unknown to me. The answer is {}.",
                self.script.wrong_answer
            ));
        };
        let demos = &pairs[..pairs.len() - 1];

        if demos.is_empty() {
            // Zero-shot: per-item schedule.
            return Ok(if self.script.zero_shot_wrong.contains(query) {
                format!(
                    "{COT_TRIGGER} This type of problem always confuses me. The answer is {}.",
                    self.script.wrong_answer
                )
            } else {
                format!("{COT_TRIGGER} This one is routine. The answer is {gold}.")
            });
        }

        let query_vec = self.script.vectors.get(query);
        let hit = demos.iter().any(|(demo_q, a_line)| {
            let Some(demo_vec) = self.script.vectors.get(demo_q) else {
                return false;
            };
            let Some(qv) = query_vec else { return false };
            let similar = dot(demo_vec, qv) > self.script.theta;
            let answer_matches = Self::answer_of(a_line) == Some(gold.as_str());
            similar && answer_matches
        });
        Ok(if hit {
            format!(
                "{COT_TRIGGER} A nearly identical worked example appears above. The answer is {gold}."
            )
        } else {
            format!(
                "{COT_TRIGGER} None of the examples resemble this. The answer is {}.",
                self.script.wrong_answer
            )
        })
    }

    fn oracle_id(&self) -> &str {
        "threshold-mock"
    }
}
