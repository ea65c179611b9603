//! Full-ranking top-K evaluation: Recall@K and NDCG@K over every item not
//! in the user's training set.
//!
//! Users are evaluated when they have both a nonempty test set and a
//! nonempty train history; training positives are masked to negative
//! infinity before the top-K cut. Ties break by ascending item id so the
//! heap fast path and the full-sort reference agree bit-for-bit. Per-user
//! work runs in parallel; means use a fixed pairwise reduction so results
//! do not depend on thread scheduling.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::InteractionDataset;
use crate::models::{dist_sq, dot, ModelState, ScoreHead};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be >= 1")]
    ZeroK,
    #[error("reference evaluator is guarded to <= {limit} users, dataset has {got}")]
    TooLarge { limit: usize, got: usize },
    #[error("model shape ({users} users, {items} items) does not match dataset ({ds_users}, {ds_items})")]
    ShapeMismatch {
        users: usize,
        items: usize,
        ds_users: usize,
        ds_items: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserMetrics {
    pub user: u32,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub users_evaluated: usize,
    pub per_user: Option<Vec<UserMetrics>>,
}

impl MetricsReport {
    pub fn csv_header(k: usize) -> String {
        format!("k,recall@{k},ndcg@{k},users_evaluated")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{}",
            self.k, self.recall, self.ndcg, self.users_evaluated
        )
    }
}

/// Deterministic sum independent of element count parity or thread layout.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn check_shapes(model: &ModelState, dataset: &InteractionDataset) -> Result<(), EvalError> {
    if model.num_users() != dataset.num_users() || model.num_items() != dataset.num_items() {
        return Err(EvalError::ShapeMismatch {
            users: model.num_users(),
            items: model.num_items(),
            ds_users: dataset.num_users(),
            ds_items: dataset.num_items(),
        });
    }
    Ok(())
}

/// Candidate entry ordered "better first": higher score, then lower id.
#[derive(Clone, Copy, PartialEq)]
struct Ranked {
    score: f64,
    id: u32,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        // Scores are never NaN (masked entries are -inf).
        self.score
            .partial_cmp(&other.score)
            .unwrap()
            .then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn users_to_evaluate(dataset: &InteractionDataset) -> Vec<u32> {
    (0..dataset.num_users() as u32)
        .filter(|&u| {
            !dataset.test().row(u as usize).is_empty()
                && !dataset.train().row(u as usize).is_empty()
        })
        .collect()
}

fn fill_scores(
    scores: &mut Vec<f64>,
    user_row: &[f64],
    items: &crate::models::Matrix,
    head: ScoreHead,
) {
    scores.clear();
    match head {
        ScoreHead::Dot => {
            scores.extend((0..items.rows()).map(|i| dot(user_row, items.row(i))));
        }
        ScoreHead::NegEuclideanSq => {
            scores.extend((0..items.rows()).map(|i| -dist_sq(user_row, items.row(i))));
        }
    }
}

fn metrics_from_ranking(
    ranking: &[u32],
    test_row: &[u32],
    k: usize,
) -> (f64, f64) {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (rank0, item) in ranking.iter().enumerate() {
        if test_row.binary_search(item).is_ok() {
            hits += 1;
            dcg += 1.0 / ((rank0 as f64 + 2.0).log2());
        }
    }
    let ideal = k.min(test_row.len());
    let mut idcg = 0.0;
    for r in 0..ideal {
        idcg += 1.0 / ((r as f64 + 2.0).log2());
    }
    let recall = hits as f64 / test_row.len() as f64;
    let ndcg = if idcg > 0.0 { dcg / idcg } else { 0.0 };
    (recall, ndcg)
}

fn evaluate_user_heap(
    dataset: &InteractionDataset,
    scores: &mut Vec<f64>,
    user: u32,
    user_row: &[f64],
    items: &crate::models::Matrix,
    k: usize,
    head: ScoreHead,
) -> UserMetrics {
    fill_scores(scores, user_row, items, head);
    for &i in dataset.train().row(user as usize) {
        scores[i as usize] = f64::NEG_INFINITY;
    }

    // Min-heap over "goodness": the root is the worst kept candidate.
    let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for (i, &score) in scores.iter().enumerate() {
        let entry = Ranked { score, id: i as u32 };
        if heap.len() < k {
            heap.push(std::cmp::Reverse(entry));
        } else if entry > heap.peek().unwrap().0 {
            heap.pop();
            heap.push(std::cmp::Reverse(entry));
        }
    }
    let mut top: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
    top.sort_unstable_by(|a, b| b.cmp(a));
    let ranking: Vec<u32> = top.into_iter().map(|e| e.id).collect();

    let (recall, ndcg) = metrics_from_ranking(&ranking, dataset.test().row(user as usize), k);
    UserMetrics { user, recall, ndcg }
}

fn report_from_users(k: usize, users: Vec<UserMetrics>, keep: bool) -> MetricsReport {
    let recalls: Vec<f64> = users.iter().map(|m| m.recall).collect();
    let ndcgs: Vec<f64> = users.iter().map(|m| m.ndcg).collect();
    let n = users.len();
    MetricsReport {
        k,
        recall: if n == 0 { 0.0 } else { pairwise_sum(&recalls) / n as f64 },
        ndcg: if n == 0 { 0.0 } else { pairwise_sum(&ndcgs) / n as f64 },
        users_evaluated: n,
        per_user: keep.then_some(users),
    }
}

/// Fast path: heap-based partial top-K selection, parallel across users.
pub fn evaluate(
    model: &ModelState,
    dataset: &InteractionDataset,
    k: usize,
    head: ScoreHead,
) -> Result<MetricsReport, EvalError> {
    evaluate_detailed(model, dataset, k, head, false)
}

pub fn evaluate_detailed(
    model: &ModelState,
    dataset: &InteractionDataset,
    k: usize,
    head: ScoreHead,
    keep_per_user: bool,
) -> Result<MetricsReport, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    check_shapes(model, dataset)?;
    let pe = model.forward(dataset);
    let users = users_to_evaluate(dataset);
    let per_user: Vec<UserMetrics> = users
        .par_iter()
        .map_init(Vec::new, |scores, &u| {
            evaluate_user_heap(dataset, scores, u, pe.users.row(u as usize), &pe.items, k, head)
        })
        .collect();
    Ok(report_from_users(k, per_user, keep_per_user))
}

/// Reference evaluator: full sort per user with the identical masking and
/// tie rules. Guarded to small datasets; must agree with [`evaluate`]
/// exactly.
pub fn brute_force_reference(
    model: &ModelState,
    dataset: &InteractionDataset,
    k: usize,
    head: ScoreHead,
) -> Result<MetricsReport, EvalError> {
    const GUARD: usize = 500;
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if dataset.num_users() > GUARD {
        return Err(EvalError::TooLarge {
            limit: GUARD,
            got: dataset.num_users(),
        });
    }
    check_shapes(model, dataset)?;
    let pe = model.forward(dataset);
    let mut per_user = Vec::new();
    for u in 0..dataset.num_users() as u32 {
        let test_row = dataset.test().row(u as usize);
        let train_row = dataset.train().row(u as usize);
        if test_row.is_empty() || train_row.is_empty() {
            continue;
        }
        let user_row = pe.users.row(u as usize);
        let mut scored: Vec<(f64, u32)> = (0..dataset.num_items() as u32)
            .map(|i| {
                let s = if train_row.binary_search(&i).is_ok() {
                    f64::NEG_INFINITY
                } else {
                    match head {
                        ScoreHead::Dot => dot(user_row, pe.items.row(i as usize)),
                        ScoreHead::NegEuclideanSq => -dist_sq(user_row, pe.items.row(i as usize)),
                    }
                };
                (s, i)
            })
            .collect();
        scored.sort_unstable_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1))
        });
        scored.truncate(k);

        let mut hits = 0usize;
        let mut dcg = 0.0;
        for (rank0, &(_, item)) in scored.iter().enumerate() {
            if test_row.binary_search(&item).is_ok() {
                hits += 1;
                dcg += 1.0 / ((rank0 as f64 + 2.0).log2());
            }
        }
        let mut idcg = 0.0;
        for r in 0..k.min(test_row.len()) {
            idcg += 1.0 / ((r as f64 + 2.0).log2());
        }
        per_user.push(UserMetrics {
            user: u,
            recall: hits as f64 / test_row.len() as f64,
            ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
        });
    }
    Ok(report_from_users(k, per_user, false))
}
