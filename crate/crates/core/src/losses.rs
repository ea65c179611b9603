//! The six training objectives: batch-mean value plus analytic gradients
//! with respect to the raw parameters of the active backbone.
//!
//! Each loss expresses its rows as per-score-term coefficients; a shared
//! accumulator turns `(user, item, d_loss/d_score)` triples into gradients
//! on backbone *outputs*, and `ModelState::pullback` translates those into
//! raw-parameter gradients (identity for `Mf`, transposed propagation for
//! `Gcn`). L2 regularization is applied by the optimizer as weight decay
//! on touched rows and is deliberately excluded from reported values.
//!
//! Quadruple arguments are grouped as `(s_ui - s_uj) + (s_li - s_lj)`, so
//! forcing `l = u` reduces a row bit-exactly to a pairwise row at doubled
//! margin.

use thiserror::Error;

use crate::dataset::InteractionDataset;
use crate::models::{pair_score, Grads, ModelState, Propagated, ScoreHead};
use crate::sampler::{BatchKind, TrainingBatch};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{loss} expects a {expected} batch, got {got}")]
    WrongBatchKind {
        loss: LossKind,
        expected: BatchKind,
        got: BatchKind,
    },
    #[error("cml margin must be >= 0, got {0}")]
    NegativeMargin(f64),
    #[error("uib requires a model with a boundary weight vector")]
    MissingBoundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Bce,
    Bpr,
    Cml,
    Uib,
    Spr,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Mse,
        LossKind::Bce,
        LossKind::Bpr,
        LossKind::Cml,
        LossKind::Uib,
        LossKind::Spr,
    ];

    pub fn batch_kind(self) -> BatchKind {
        match self {
            LossKind::Mse | LossKind::Bce => BatchKind::Pointwise,
            LossKind::Bpr | LossKind::Cml | LossKind::Uib => BatchKind::Pairwise,
            LossKind::Spr => BatchKind::Quadruple,
        }
    }

    /// Scoring head implied by the loss (`cml` ranks by distance).
    pub fn head(self) -> ScoreHead {
        match self {
            LossKind::Cml => ScoreHead::NegEuclideanSq,
            _ => ScoreHead::Dot,
        }
    }

    pub fn needs_boundary(self) -> bool {
        matches!(self, LossKind::Uib)
    }

    pub fn needs_similarity_index(self) -> bool {
        matches!(self, LossKind::Spr)
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        match s {
            "mse" => Some(LossKind::Mse),
            "bce" => Some(LossKind::Bce),
            "bpr" => Some(LossKind::Bpr),
            "cml" => Some(LossKind::Cml),
            "uib" => Some(LossKind::Uib),
            "spr" => Some(LossKind::Spr),
            _ => None,
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
            LossKind::Bpr => "bpr",
            LossKind::Cml => "cml",
            LossKind::Uib => "uib",
            LossKind::Spr => "spr",
        };
        f.write_str(name)
    }
}

/// Batch-mean loss value, raw-parameter gradients, and per-row diagnostics
/// (the argument each row fed into its nonlinearity).
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub grads: Grads,
    pub aux: Option<Vec<f64>>,
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output-space gradient accumulator for score terms.
struct ScoreGrads<'m> {
    grads: Grads,
    head: ScoreHead,
    pe: &'m Propagated<'m>,
}

impl<'m> ScoreGrads<'m> {
    fn new(pe: &'m Propagated<'m>, head: ScoreHead) -> Self {
        ScoreGrads {
            grads: Grads::default(),
            head,
            pe,
        }
    }

    /// Accumulate `coef * d(score(u, i)) / d(outputs)`.
    fn add(&mut self, u: u32, i: u32, coef: f64) {
        let gu = self.pe.users.row(u as usize);
        let gi = self.pe.items.row(i as usize);
        match self.head {
            ScoreHead::Dot => {
                self.grads.add_user(u, coef, gi);
                self.grads.add_item(i, coef, gu);
            }
            ScoreHead::NegEuclideanSq => {
                // d(-|a-b|^2)/da = -2(a-b), /db = +2(a-b)
                let diff: Vec<f64> = gu.iter().zip(gi).map(|(a, b)| a - b).collect();
                self.grads.add_user(u, -2.0 * coef, &diff);
                self.grads.add_item(i, 2.0 * coef, &diff);
            }
        }
    }
}

fn check_kind(loss: LossKind, batch: &TrainingBatch) -> Result<(), LossError> {
    if batch.kind() != loss.batch_kind() {
        return Err(LossError::WrongBatchKind {
            loss,
            expected: loss.batch_kind(),
            got: batch.kind(),
        });
    }
    Ok(())
}

/// Compute one loss over a batch: mean value and raw-parameter gradients.
pub fn compute(
    kind: LossKind,
    batch: &TrainingBatch,
    model: &ModelState,
    dataset: &InteractionDataset,
    margin: f64,
) -> Result<LossOutput, LossError> {
    check_kind(kind, batch)?;
    if kind == LossKind::Cml && margin < 0.0 {
        return Err(LossError::NegativeMargin(margin));
    }
    if kind.needs_boundary() && model.boundary_w().is_none() {
        return Err(LossError::MissingBoundary);
    }

    let pe = model.forward(dataset);
    let head = kind.head();
    let n = batch.len().max(1);
    let inv_n = 1.0 / n as f64;
    let mut acc = ScoreGrads::new(&pe, head);
    let mut value = 0.0;
    let mut aux = Vec::with_capacity(batch.len());

    match (kind, batch) {
        (LossKind::Mse, TrainingBatch::Pointwise(rows)) => {
            for row in rows {
                let y_hat = pair_score(&pe, row.user, row.item, head);
                let residual = y_hat - row.label as f64;
                value += residual * residual * inv_n;
                acc.add(row.user, row.item, 2.0 * residual * inv_n);
                aux.push(residual);
            }
        }
        (LossKind::Bce, TrainingBatch::Pointwise(rows)) => {
            for row in rows {
                let y_hat = pair_score(&pe, row.user, row.item, head);
                let y = row.label as f64;
                value += (y * softplus(-y_hat) + (1.0 - y) * softplus(y_hat)) * inv_n;
                acc.add(row.user, row.item, (sigmoid(y_hat) - y) * inv_n);
                aux.push(y_hat);
            }
        }
        (LossKind::Bpr, TrainingBatch::Pairwise(rows)) => {
            for row in rows {
                let s = pair_score(&pe, row.user, row.pos, head)
                    - pair_score(&pe, row.user, row.neg, head);
                value += softplus(-s) * inv_n;
                let coef = -sigmoid(-s) * inv_n;
                acc.add(row.user, row.pos, coef);
                acc.add(row.user, row.neg, -coef);
                aux.push(s);
            }
        }
        (LossKind::Cml, TrainingBatch::Pairwise(rows)) => {
            for row in rows {
                // Scores are negated squared distances, so the hinge
                // argument m + d(u,i)^2 - d(u,j)^2 reads m - s_ui + s_uj.
                let s_ui = pair_score(&pe, row.user, row.pos, head);
                let s_uj = pair_score(&pe, row.user, row.neg, head);
                let arg = margin - s_ui + s_uj;
                aux.push(arg);
                if arg <= 0.0 {
                    continue;
                }
                value += arg * inv_n;
                acc.add(row.user, row.pos, -inv_n);
                acc.add(row.user, row.neg, inv_n);
            }
        }
        (LossKind::Uib, TrainingBatch::Pairwise(rows)) => {
            let w = model.boundary_w().unwrap().to_vec();
            for row in rows {
                let user_out = pe.users.row(row.user as usize).to_vec();
                let boundary = crate::models::dot(&w, &user_out);
                let a1 = pair_score(&pe, row.user, row.pos, head) - boundary;
                let a2 = boundary - pair_score(&pe, row.user, row.neg, head);
                value += (softplus(-a1) + softplus(-a2)) * inv_n;
                let d1 = -sigmoid(-a1) * inv_n; // d value / d a1
                let d2 = -sigmoid(-a2) * inv_n;
                acc.add(row.user, row.pos, d1);
                acc.add(row.user, row.neg, -d2);
                // d value / d boundary = -d1 + d2, and boundary = w . G(u).
                let db = -d1 + d2;
                acc.grads.add_boundary(db, &user_out);
                acc.grads.add_user(row.user, db, &w);
                aux.push(a1);
            }
        }
        (LossKind::Spr, TrainingBatch::Quadruple(rows)) => {
            for row in rows {
                let s = (pair_score(&pe, row.user, row.pos, head)
                    - pair_score(&pe, row.user, row.neg, head))
                    + (pair_score(&pe, row.similar, row.pos, head)
                        - pair_score(&pe, row.similar, row.neg, head));
                value += softplus(-s) * inv_n;
                let coef = -sigmoid(-s) * inv_n;
                acc.add(row.user, row.pos, coef);
                acc.add(row.user, row.neg, -coef);
                acc.add(row.similar, row.pos, coef);
                acc.add(row.similar, row.neg, -coef);
                aux.push(s);
            }
        }
        _ => unreachable!("kind checked above"),
    }

    let grads = model.pullback(dataset, acc.grads);
    Ok(LossOutput {
        value,
        grads,
        aux: Some(aux),
    })
}

pub fn mse(
    batch: &TrainingBatch,
    model: &ModelState,
    dataset: &InteractionDataset,
) -> Result<LossOutput, LossError> {
    compute(LossKind::Mse, batch, model, dataset, 0.0)
}

pub fn bce(
    batch: &TrainingBatch,
    model: &ModelState,
    dataset: &InteractionDataset,
) -> Result<LossOutput, LossError> {
    compute(LossKind::Bce, batch, model, dataset, 0.0)
}

pub fn bpr(
    batch: &TrainingBatch,
    model: &ModelState,
    dataset: &InteractionDataset,
) -> Result<LossOutput, LossError> {
    compute(LossKind::Bpr, batch, model, dataset, 0.0)
}

pub fn cml(
    batch: &TrainingBatch,
    model: &ModelState,
    dataset: &InteractionDataset,
    margin: f64,
) -> Result<LossOutput, LossError> {
    compute(LossKind::Cml, batch, model, dataset, margin)
}

pub fn uib(
    batch: &TrainingBatch,
    model: &ModelState,
    dataset: &InteractionDataset,
) -> Result<LossOutput, LossError> {
    compute(LossKind::Uib, batch, model, dataset, 0.0)
}

pub fn spr(
    batch: &TrainingBatch,
    model: &ModelState,
    dataset: &InteractionDataset,
) -> Result<LossOutput, LossError> {
    compute(LossKind::Spr, batch, model, dataset, 0.0)
}
