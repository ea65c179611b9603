//! Seeded batch construction: labeled pointwise pairs, pairwise ranking
//! triples, and oversampled quadruples driven by the user-similarity index.
//!
//! Quadruple sampling walks a uniformly random candidate user stream with a
//! per-round draw budget of `B * gamma^2` ids; when a round's budget runs
//! out before `B * gamma` quadruples are collected, a fresh round begins.
//! Candidates whose history or neighbor list is empty are skipped and
//! counted. Everything is deterministic under the caller's RNG.

use rand::Rng;
use thiserror::Error;

use crate::dataset::InteractionDataset;
use crate::similarity::{Side, SimilarityIndex};

/// Per-row rejection cap for negative sampling, and the cap on re-drawing
/// an alternative user when a row cannot be completed.
const RETRY_CAP: usize = 100;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("dataset has no train interactions")]
    EmptyTrainSet,
    #[error("could not sample a negative item after {RETRY_CAP} user retries")]
    NegativeSamplingExhausted,
    #[error("similarity index side must be user, got item")]
    WrongIndexSide,
    #[error("similarity index does not match dataset: {0}")]
    StaleIndex(#[from] crate::similarity::SimilarityError),
    #[error("no candidate user produced a quadruple in a full sampling round")]
    NoEligibleUsers,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PointwiseRow {
    pub user: u32,
    pub item: u32,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairwiseRow {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadrupleRow {
    pub user: u32,
    pub similar: u32,
    pub pos: u32,
    pub neg: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchKind {
    Pointwise,
    Pairwise,
    Quadruple,
}

impl std::fmt::Display for BatchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BatchKind::Pointwise => "pointwise",
            BatchKind::Pairwise => "pairwise",
            BatchKind::Quadruple => "quadruple",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TrainingBatch {
    Pointwise(Vec<PointwiseRow>),
    Pairwise(Vec<PairwiseRow>),
    Quadruple(Vec<QuadrupleRow>),
}

impl TrainingBatch {
    pub fn kind(&self) -> BatchKind {
        match self {
            TrainingBatch::Pointwise(_) => BatchKind::Pointwise,
            TrainingBatch::Pairwise(_) => BatchKind::Pairwise,
            TrainingBatch::Quadruple(_) => BatchKind::Quadruple,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainingBatch::Pointwise(rows) => rows.len(),
            TrainingBatch::Pairwise(rows) => rows.len(),
            TrainingBatch::Quadruple(rows) => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Skip accounting for one quadruple batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QuadrupleStats {
    pub skipped_empty_history: u64,
    pub skipped_no_neighbors: u64,
    pub skipped_negative_exhausted: u64,
    /// Candidate rounds consumed (1 unless a round's budget ran out).
    pub rounds: u64,
}

impl QuadrupleStats {
    pub fn total_skipped(&self) -> u64 {
        self.skipped_empty_history + self.skipped_no_neighbors + self.skipped_negative_exhausted
    }
}

fn draw_negative<R: Rng>(
    dataset: &InteractionDataset,
    user: u32,
    rng: &mut R,
) -> Option<u32> {
    let num_items = dataset.num_items() as u32;
    let row_len = dataset.train().row(user as usize).len();
    if row_len >= num_items as usize {
        return None;
    }
    for _ in 0..RETRY_CAP {
        let j = rng.gen_range(0..num_items);
        if !dataset.train().contains(user as usize, j) {
            return Some(j);
        }
    }
    None
}

/// Labeled batch: positives drawn uniformly from train interactions, each
/// followed by `neg_per_pos` uniform negatives for the same user.
pub fn sample_pointwise<R: Rng>(
    dataset: &InteractionDataset,
    batch_size: usize,
    neg_per_pos: usize,
    rng: &mut R,
) -> Result<TrainingBatch, SamplerError> {
    if batch_size == 0 || neg_per_pos == 0 {
        return Err(SamplerError::InvalidParameter(
            "batch_size and neg_per_pos must be >= 1".into(),
        ));
    }
    let m = dataset.train_nnz();
    if m == 0 {
        return Err(SamplerError::EmptyTrainSet);
    }
    let mut rows = Vec::with_capacity(batch_size);
    'fill: while rows.len() < batch_size {
        let mut group = None;
        for _ in 0..RETRY_CAP {
            let e = rng.gen_range(0..m);
            let (u, i) = dataset.train().entry(e);
            let user = u as u32;
            let mut negs = Vec::with_capacity(neg_per_pos);
            for _ in 0..neg_per_pos {
                match draw_negative(dataset, user, rng) {
                    Some(j) => negs.push(j),
                    None => break,
                }
            }
            if negs.len() == neg_per_pos {
                group = Some((user, i, negs));
                break;
            }
        }
        let Some((user, pos, negs)) = group else {
            return Err(SamplerError::NegativeSamplingExhausted);
        };
        rows.push(PointwiseRow {
            user,
            item: pos,
            label: 1,
        });
        for j in negs {
            if rows.len() == batch_size {
                break 'fill;
            }
            rows.push(PointwiseRow {
                user,
                item: j,
                label: 0,
            });
        }
    }
    rows.truncate(batch_size);
    Ok(TrainingBatch::Pointwise(rows))
}

/// Ranking triples: user uniform over users with nonempty history, positive
/// uniform over the history, negative by rejection sampling.
pub fn sample_pairwise<R: Rng>(
    dataset: &InteractionDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<TrainingBatch, SamplerError> {
    if batch_size == 0 {
        return Err(SamplerError::InvalidParameter("batch_size must be >= 1".into()));
    }
    let eligible = dataset.eligible_users();
    if eligible.is_empty() {
        return Err(SamplerError::EmptyTrainSet);
    }
    let mut rows = Vec::with_capacity(batch_size);
    while rows.len() < batch_size {
        let mut row = None;
        for _ in 0..RETRY_CAP {
            let user = eligible[rng.gen_range(0..eligible.len())];
            let history = dataset.train().row(user as usize);
            let pos = history[rng.gen_range(0..history.len())];
            if let Some(neg) = draw_negative(dataset, user, rng) {
                row = Some(PairwiseRow { user, pos, neg });
                break;
            }
        }
        match row {
            Some(r) => rows.push(r),
            None => return Err(SamplerError::NegativeSamplingExhausted),
        }
    }
    Ok(TrainingBatch::Pairwise(rows))
}

/// Oversampled quadruple batch of exactly `batch_size * gamma` rows.
pub fn sample_quadruple<R: Rng>(
    dataset: &InteractionDataset,
    index: &SimilarityIndex,
    batch_size: usize,
    gamma: u32,
    rng: &mut R,
) -> Result<(TrainingBatch, QuadrupleStats), SamplerError> {
    if batch_size == 0 || gamma == 0 {
        return Err(SamplerError::InvalidParameter(
            "batch_size and gamma must be >= 1".into(),
        ));
    }
    if index.side() != Side::User {
        return Err(SamplerError::WrongIndexSide);
    }
    index.verify_against(dataset)?;
    if dataset.train_nnz() == 0 {
        return Err(SamplerError::EmptyTrainSet);
    }

    let num_users = dataset.num_users() as u32;
    let target = batch_size * gamma as usize;
    let round_budget = batch_size * (gamma as usize) * (gamma as usize);
    let mut stats = QuadrupleStats {
        rounds: 1,
        ..Default::default()
    };
    let mut budget = round_budget;
    let mut emitted_at_round_start = 0usize;
    let mut rows = Vec::with_capacity(target);

    while rows.len() < target {
        if budget == 0 {
            if rows.len() == emitted_at_round_start {
                return Err(SamplerError::NoEligibleUsers);
            }
            budget = round_budget;
            emitted_at_round_start = rows.len();
            stats.rounds += 1;
        }
        budget -= 1;
        let user = rng.gen_range(0..num_users);
        let history = dataset.train().row(user as usize);
        if history.is_empty() {
            stats.skipped_empty_history += 1;
            continue;
        }
        let neighbors = index.neighbors(user);
        if neighbors.is_empty() {
            stats.skipped_no_neighbors += 1;
            continue;
        }
        let pos = history[rng.gen_range(0..history.len())];
        let Some(neg) = draw_negative(dataset, user, rng) else {
            stats.skipped_negative_exhausted += 1;
            continue;
        };
        let similar = neighbors[rng.gen_range(0..neighbors.len())].0;
        rows.push(QuadrupleRow {
            user,
            similar,
            pos,
            neg,
        });
    }
    Ok((TrainingBatch::Quadruple(rows), stats))
}
