//! Exact similarity search over exemplar stores.
//!
//! `top_k` is a linear scan sorted by cosine descending with ascending-id
//! tie-breaks, so results are deterministic across platforms. Anchored
//! retrieval walks a list of negatives and picks, for each, the most
//! similar positive not yet used.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ExemplarRecord, Polarity};
use crate::embedding::{cosine, EmbedError, EmbeddingVector};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error("anchor {0} does not resolve to a negative record")]
    AnchorNotFound(String),
    #[error("positive store exhausted while anchoring {anchor}")]
    PositiveStoreEmpty { anchor: String },
}

/// One ranked search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub exemplar_id: String,
    pub score: f64,
}

/// A positive chosen because it is the nearest to a retrieved negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoredPositive {
    pub anchor_id: String,
    pub positive_id: String,
    pub score: f64,
}

/// Returns the `k` records most similar to `query`, excluding `exclude`.
/// Hits are sorted by score descending, ties broken by ascending id;
/// fewer than `k` hits come back when the store is small.
pub fn top_k(
    store: &[ExemplarRecord],
    query: &EmbeddingVector,
    k: usize,
    exclude: &BTreeSet<String>,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut hits = Vec::new();
    for record in store {
        if exclude.contains(&record.id) {
            continue;
        }
        let score = cosine(&record.embedding, query)?;
        hits.push(RetrievalHit {
            exemplar_id: record.id.clone(),
            score,
        });
    }
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("cosine scores are finite")
            .then_with(|| a.exemplar_id.cmp(&b.exemplar_id))
    });
    hits.truncate(k);
    Ok(hits)
}

/// For each retrieved negative, in input order, finds the positive most
/// similar to that negative's embedding. Positives named in
/// `dedup_against` and positives already chosen by earlier anchors are
/// skipped unless `allow_duplicates` is set.
pub fn anchor_positives(
    negatives: &[RetrievalHit],
    negative_store: &[ExemplarRecord],
    positive_store: &[ExemplarRecord],
    dedup_against: &BTreeSet<String>,
    allow_duplicates: bool,
) -> Result<Vec<AnchoredPositive>, RetrievalError> {
    let mut chosen: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::with_capacity(negatives.len());
    for hit in negatives {
        let anchor = negative_store
            .iter()
            .find(|r| r.id == hit.exemplar_id && r.polarity == Polarity::Negative)
            .ok_or_else(|| RetrievalError::AnchorNotFound(hit.exemplar_id.clone()))?;
        let mut best: Option<(f64, &ExemplarRecord)> = None;
        for candidate in positive_store {
            if !allow_duplicates
                && (dedup_against.contains(&candidate.id) || chosen.contains(&candidate.id))
            {
                continue;
            }
            let score = cosine(&candidate.embedding, &anchor.embedding)?;
            let better = match &best {
                None => true,
                Some((best_score, best_rec)) => {
                    score > *best_score || (score == *best_score && candidate.id < best_rec.id)
                }
            };
            if better {
                best = Some((score, candidate));
            }
        }
        let (score, winner) = best.ok_or_else(|| RetrievalError::PositiveStoreEmpty {
            anchor: anchor.id.clone(),
        })?;
        chosen.insert(winner.id.clone());
        out.push(AnchoredPositive {
            anchor_id: anchor.id.clone(),
            positive_id: winner.id.clone(),
            score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingVector;

    fn record(id: &str, polarity: Polarity, values: &[f64]) -> ExemplarRecord {
        ExemplarRecord {
            id: id.to_string(),
            question: format!("q-{id}"),
            rationale: String::new(),
            predicted: "1".into(),
            gold: if polarity == Polarity::Positive {
                "1"
            } else {
                "2"
            }
            .into(),
            polarity,
            embedding: EmbeddingVector::unit(values.to_vec()).unwrap(),
            cluster: 0,
            dataset: "test".into(),
            extraction_failed: false,
        }
    }

    fn positives(vectors: &[&[f64]]) -> Vec<ExemplarRecord> {
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| record(&format!("pos-{i:02}"), Polarity::Positive, v))
            .collect()
    }

    #[test]
    fn k_zero_is_empty() {
        let store = positives(&[&[1.0, 0.0]]);
        let q = EmbeddingVector::unit(vec![1.0, 0.0]).unwrap();
        assert!(top_k(&store, &q, 0, &BTreeSet::new()).unwrap().is_empty());
    }

    #[test]
    fn k_larger_than_store_returns_everything_sorted() {
        let store = positives(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let q = EmbeddingVector::unit(vec![1.0, 0.0]).unwrap();
        let hits = top_k(&store, &q, 10, &BTreeSet::new()).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].exemplar_id, "pos-00");
        assert_eq!(hits[1].exemplar_id, "pos-02");
        assert_eq!(hits[2].exemplar_id, "pos-01");
        assert!(hits[0].score >= hits[1].score && hits[1].score >= hits[2].score);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let store = vec![
            record("b", Polarity::Positive, &[1.0, 0.0]),
            record("a", Polarity::Positive, &[1.0, 0.0]),
            record("c", Polarity::Positive, &[0.0, 1.0]),
        ];
        let q = EmbeddingVector::unit(vec![1.0, 0.0]).unwrap();
        let hits = top_k(&store, &q, 2, &BTreeSet::new()).unwrap();
        assert_eq!(hits[0].exemplar_id, "a");
        assert_eq!(hits[1].exemplar_id, "b");
    }

    #[test]
    fn exclusions_are_honored() {
        let store = positives(&[&[1.0, 0.0], &[0.9, 0.1]]);
        let q = EmbeddingVector::unit(vec![1.0, 0.0]).unwrap();
        let exclude: BTreeSet<String> = ["pos-00".to_string()].into();
        let hits = top_k(&store, &q, 5, &exclude).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].exemplar_id, "pos-01");
    }

    #[test]
    fn anchored_identity_match_scores_one() {
        let neg = vec![record("neg-0", Polarity::Negative, &[0.6, 0.8])];
        let pos = positives(&[&[0.6, 0.8], &[1.0, 0.0]]);
        let hits = vec![RetrievalHit {
            exemplar_id: "neg-0".into(),
            score: 0.9,
        }];
        let anchored = anchor_positives(&hits, &neg, &pos, &BTreeSet::new(), false).unwrap();
        assert_eq!(anchored.len(), 1);
        assert_eq!(anchored[0].positive_id, "pos-00");
        assert!((anchored[0].score - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn second_anchor_gets_next_nearest_when_deduped() {
        let negs = vec![
            record("neg-0", Polarity::Negative, &[1.0, 0.0]),
            record("neg-1", Polarity::Negative, &[1.0, 0.05]),
        ];
        let pos = positives(&[&[1.0, 0.01], &[0.9, 0.3]]);
        let hits = vec![
            RetrievalHit {
                exemplar_id: "neg-0".into(),
                score: 0.0,
            },
            RetrievalHit {
                exemplar_id: "neg-1".into(),
                score: 0.0,
            },
        ];
        let anchored = anchor_positives(&hits, &negs, &pos, &BTreeSet::new(), false).unwrap();
        assert_eq!(anchored[0].positive_id, "pos-00");
        assert_eq!(anchored[1].positive_id, "pos-01");

        let dup = anchor_positives(&hits, &negs, &pos, &BTreeSet::new(), true).unwrap();
        assert_eq!(dup[0].positive_id, "pos-00");
        assert_eq!(dup[1].positive_id, "pos-00");
    }

    #[test]
    fn store_exhaustion_is_reported() {
        let negs = vec![record("neg-0", Polarity::Negative, &[1.0, 0.0])];
        let pos = positives(&[&[1.0, 0.0]]);
        let hits = vec![RetrievalHit {
            exemplar_id: "neg-0".into(),
            score: 0.0,
        }];
        let dedup: BTreeSet<String> = ["pos-00".to_string()].into();
        assert!(matches!(
            anchor_positives(&hits, &negs, &pos, &dedup, false),
            Err(RetrievalError::PositiveStoreEmpty { .. })
        ));
    }

    #[test]
    fn anchor_must_resolve_to_negative() {
        let negs = vec![record("other", Polarity::Negative, &[1.0, 0.0])];
        let pos = positives(&[&[1.0, 0.0]]);
        let hits = vec![RetrievalHit {
            exemplar_id: "missing".into(),
            score: 0.0,
        }];
        assert!(matches!(
            anchor_positives(&hits, &negs, &pos, &BTreeSet::new(), false),
            Err(RetrievalError::AnchorNotFound(_))
        ));
    }

    #[test]
    fn prenormalization_scale_does_not_change_ranking() {
        let store_a = positives(&[&[3.0, 1.0, 0.5], &[0.2, 2.0, 1.0], &[1.0, 1.0, 1.0]]);
        let scaled: Vec<&[f64]> = vec![&[9.0, 3.0, 1.5], &[0.6, 6.0, 3.0], &[3.0, 3.0, 3.0]];
        let store_b = positives(&scaled);
        let q = EmbeddingVector::unit(vec![1.0, 0.3, 0.2]).unwrap();
        let a = top_k(&store_a, &q, 3, &BTreeSet::new()).unwrap();
        let b = top_k(&store_b, &q, 3, &BTreeSet::new()).unwrap();
        let ids_a: Vec<&str> = a.iter().map(|h| h.exemplar_id.as_str()).collect();
        let ids_b: Vec<&str> = b.iter().map(|h| h.exemplar_id.as_str()).collect();
        assert_eq!(ids_a, ids_b);
    }
}
