//! k-means over embeddings and the per-cluster half/half split that
//! produces the train and test sides of a dataset.
//!
//! Lloyd iterations with k-means++ initialization, Euclidean distance, and
//! a fixed RNG seed so clustering is reproducible bit-for-bit. Empty
//! clusters are reseeded to the point farthest from its current centroid.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("k = {k} exceeds the number of points ({points})")]
    KTooLarge { k: usize, points: usize },
    #[error("k must be at least 1")]
    KZero,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("input is empty")]
    EmptyInput,
}

/// One item's cluster membership.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub item_id: String,
    pub cluster: usize,
}

/// Result of `split_per_cluster`: disjoint, exhaustive id sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitResult {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

/// Output of a k-means run. `sse_history` holds the within-cluster sum of
/// squared distances after each assignment step.
#[derive(Debug, Clone)]
pub struct KmeansOutput {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sse_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first centroid uniform, later centroids sampled with
/// probability proportional to squared distance from the nearest chosen one.
fn init_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut dists: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a centroid; fall back to a
            // uniform draw.
            points[rng.random_range(0..points.len())].clone()
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            points[chosen].clone()
        };
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &next);
            if d < dists[i] {
                dists[i] = d;
            }
        }
        centroids.push(next);
    }
    centroids
}

/// Runs seeded k-means. Terminates when assignments stop changing or after
/// `max_iters` iterations.
pub fn kmeans(
    points: &[EmbeddingVector],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansOutput, ClusteringError> {
    if points.is_empty() {
        return Err(ClusteringError::EmptyInput);
    }
    if k == 0 {
        return Err(ClusteringError::KZero);
    }
    if k > points.len() {
        return Err(ClusteringError::KTooLarge {
            k,
            points: points.len(),
        });
    }
    let dim = points[0].dim();
    for p in points {
        if p.dim() != dim {
            return Err(ClusteringError::DimMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
    }
    let raw: Vec<Vec<f64>> = points.iter().map(|p| p.values().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(&raw, k, &mut rng);
    let mut labels = vec![0usize; raw.len()];
    let mut sse_history = Vec::new();

    let mut updates = 0;
    loop {
        // Assignment step. The loop always terminates right after one, so
        // returned labels are nearest-centroid-optimal for the returned
        // centroids.
        let mut sse = 0.0;
        let mut changed = false;
        for (i, p) in raw.iter().enumerate() {
            let (j, d) = nearest_centroid(p, &centroids);
            if labels[i] != j {
                changed = true;
                labels[i] = j;
            }
            sse += d;
        }
        let converged = !changed && !sse_history.is_empty();
        sse_history.push(sse);
        if converged || updates >= max_iters.max(1) {
            break;
        }
        updates += 1;

        // Update step: means of members; empty clusters move to the point
        // farthest from its assigned centroid.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in raw.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i]].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for s in sums[j].iter_mut() {
                    *s /= counts[j] as f64;
                }
                centroids[j] = sums[j].clone();
            } else {
                let farthest = raw
                    .iter()
                    .enumerate()
                    .max_by(|(i, p), (i2, p2)| {
                        let da = sq_dist(p, &centroids[labels[*i]]);
                        let db = sq_dist(p2, &centroids[labels[*i2]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[j] = raw[farthest].clone();
            }
        }
    }

    Ok(KmeansOutput {
        labels,
        centroids,
        sse_history,
    })
}

/// Clusters `(id, embedding)` pairs; convenience wrapper producing
/// id-tagged assignments.
pub fn assign_clusters(
    items: &[(String, EmbeddingVector)],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Vec<ClusterAssignment>, KmeansOutput), ClusteringError> {
    let points: Vec<EmbeddingVector> = items.iter().map(|(_, v)| v.clone()).collect();
    let output = kmeans(&points, k, seed, max_iters)?;
    let assignments = items
        .iter()
        .zip(output.labels.iter())
        .map(|((id, _), &cluster)| ClusterAssignment {
            item_id: id.clone(),
            cluster,
        })
        .collect();
    Ok((assignments, output))
}

/// Shuffles each cluster with a seeded RNG and sends the first
/// ceil(size/2) items to train, the remainder to test.
pub fn split_per_cluster(
    assignments: &[ClusterAssignment],
    seed: u64,
) -> Result<SplitResult, ClusteringError> {
    if assignments.is_empty() {
        return Err(ClusteringError::EmptyInput);
    }
    let mut by_cluster: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for a in assignments {
        by_cluster.entry(a.cluster).or_default().push(&a.item_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = BTreeSet::new();
    let mut test_ids = BTreeSet::new();
    for (_, mut ids) in by_cluster {
        ids.shuffle(&mut rng);
        let train_count = ids.len().div_ceil(2);
        for (i, id) in ids.into_iter().enumerate() {
            if i < train_count {
                train_ids.insert(id.to_string());
            } else {
                test_ids.insert(id.to_string());
            }
        }
    }
    Ok(SplitResult {
        train_ids,
        test_ids,
    })
}
