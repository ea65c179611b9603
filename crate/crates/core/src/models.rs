//! Embedding backbones and their parameter updates.
//!
//! Two backbones share one scoring interface: plain matrix factorization
//! (`Mf`, raw tables) and light graph-convolution propagation (`Gcn`),
//! which averages degree-normalized neighborhood aggregates over layers
//! `0..=L`. The propagation operator is symmetric, so gradient pullback
//! reuses the forward pass.

use std::borrow::Cow;
use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::InteractionDataset;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("gradient dimension {got} does not match embedding dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model has no boundary weight vector")]
    MissingBoundary,
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    Mf,
    Gcn { layers: u32 },
}

/// Scoring head applied to backbone-output embeddings. Higher is always
/// better; the Euclidean head is negated so one descending-score ranking
/// path serves every loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreHead {
    Dot,
    NegEuclideanSq,
}

/// Backbone-transformed embeddings used for scoring. For `Mf` these alias
/// the raw tables; for `Gcn` they are the layer-averaged propagation.
pub struct Propagated<'a> {
    pub users: Cow<'a, Matrix>,
    pub items: Cow<'a, Matrix>,
}

/// Sparse parameter gradients: touched embedding rows plus the optional
/// boundary vector. Contributions to the same row accumulate.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    pub users: HashMap<u32, Vec<f64>>,
    pub items: HashMap<u32, Vec<f64>>,
    pub boundary_w: Option<Vec<f64>>,
}

impl Grads {
    pub fn is_empty(&self) -> bool {
        self.users.is_empty() && self.items.is_empty() && self.boundary_w.is_none()
    }

    pub fn add_user(&mut self, u: u32, coef: f64, vec: &[f64]) {
        axpy_into(self.users.entry(u).or_insert_with(|| vec![0.0; vec.len()]), coef, vec);
    }

    pub fn add_item(&mut self, i: u32, coef: f64, vec: &[f64]) {
        axpy_into(self.items.entry(i).or_insert_with(|| vec![0.0; vec.len()]), coef, vec);
    }

    pub fn add_boundary(&mut self, coef: f64, vec: &[f64]) {
        let w = self
            .boundary_w
            .get_or_insert_with(|| vec![0.0; vec.len()]);
        axpy_into(w, coef, vec);
    }
}

fn axpy_into(acc: &mut [f64], coef: f64, vec: &[f64]) {
    for (a, v) in acc.iter_mut().zip(vec) {
        *a += coef * v;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Adam hyperparameters; `weight_decay` is the L2 constant applied to
/// touched embedding rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AdamState {
    pub(crate) step: u64,
    pub(crate) m_user: Matrix,
    pub(crate) v_user: Matrix,
    pub(crate) m_item: Matrix,
    pub(crate) v_item: Matrix,
    pub(crate) m_w: Option<Vec<f64>>,
    pub(crate) v_w: Option<Vec<f64>>,
}

/// Embedding tables, optional boundary vector, and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub(crate) backbone: Backbone,
    pub(crate) user_emb: Matrix,
    pub(crate) item_emb: Matrix,
    pub(crate) boundary_w: Option<Vec<f64>>,
    pub(crate) adam: AdamState,
}

impl ModelState {
    /// Xavier-uniform initialization, treating each table as an
    /// `[N x d]` layer (`a = sqrt(6 / (N + d))`); the boundary vector and
    /// all moments start at zero. Deterministic under `seed`.
    pub fn init(
        num_users: usize,
        num_items: usize,
        d: usize,
        backbone: Backbone,
        with_boundary: bool,
        seed: u64,
    ) -> ModelState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut user_emb = Matrix::zeros(num_users, d);
        xavier_fill(&mut user_emb, &mut rng);
        let mut item_emb = Matrix::zeros(num_items, d);
        xavier_fill(&mut item_emb, &mut rng);
        let boundary_w = with_boundary.then(|| vec![0.0; d]);
        ModelState {
            backbone,
            user_emb,
            item_emb,
            adam: AdamState {
                step: 0,
                m_user: Matrix::zeros(num_users, d),
                v_user: Matrix::zeros(num_users, d),
                m_item: Matrix::zeros(num_items, d),
                v_item: Matrix::zeros(num_items, d),
                m_w: boundary_w.as_ref().map(|w| vec![0.0; w.len()]),
                v_w: boundary_w.as_ref().map(|w| vec![0.0; w.len()]),
            },
            boundary_w,
        }
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn user_embeddings(&self) -> &Matrix {
        &self.user_emb
    }

    pub fn item_embeddings(&self) -> &Matrix {
        &self.item_emb
    }

    pub fn boundary_w(&self) -> Option<&[f64]> {
        self.boundary_w.as_deref()
    }

    pub fn optimizer_step(&self) -> u64 {
        self.adam.step
    }

    /// Backbone-output embeddings for scoring.
    pub fn forward(&self, dataset: &InteractionDataset) -> Propagated<'_> {
        match self.backbone {
            Backbone::Mf => Propagated {
                users: Cow::Borrowed(&self.user_emb),
                items: Cow::Borrowed(&self.item_emb),
            },
            Backbone::Gcn { layers } => {
                let (users, items) = propagate(dataset, &self.user_emb, &self.item_emb, layers);
                Propagated {
                    users: Cow::Owned(users),
                    items: Cow::Owned(items),
                }
            }
        }
    }

    /// Translate gradients w.r.t. backbone outputs into gradients w.r.t.
    /// raw parameters. The propagation operator is symmetric, so the `Gcn`
    /// pullback is the forward pass applied to the gradient field.
    pub fn pullback(&self, dataset: &InteractionDataset, output_grads: Grads) -> Grads {
        match self.backbone {
            Backbone::Mf => output_grads,
            Backbone::Gcn { layers } => {
                let d = self.dim();
                let mut gu = Matrix::zeros(self.num_users(), d);
                for (&u, g) in &output_grads.users {
                    gu.row_mut(u as usize).copy_from_slice(g);
                }
                let mut gi = Matrix::zeros(self.num_items(), d);
                for (&i, g) in &output_grads.items {
                    gi.row_mut(i as usize).copy_from_slice(g);
                }
                let (pu, pi) = propagate(dataset, &gu, &gi, layers);
                let mut pulled = Grads {
                    boundary_w: output_grads.boundary_w,
                    ..Grads::default()
                };
                for r in 0..pu.rows() {
                    let row = pu.row(r);
                    if row.iter().any(|&v| v != 0.0) {
                        pulled.users.insert(r as u32, row.to_vec());
                    }
                }
                for r in 0..pi.rows() {
                    let row = pi.row(r);
                    if row.iter().any(|&v| v != 0.0) {
                        pulled.items.insert(r as u32, row.to_vec());
                    }
                }
                pulled
            }
        }
    }

    /// Sparse Adam step with bias correction over exactly the touched rows.
    /// The L2 term `weight_decay * theta` is added to touched embedding-row
    /// gradients before the moment update.
    pub fn apply_gradients(
        &mut self,
        grads: &Grads,
        hyper: &AdamHyper,
    ) -> Result<(), ModelError> {
        let d = self.dim();
        let mut user_keys: Vec<u32> = grads.users.keys().copied().collect();
        user_keys.sort_unstable();
        let mut item_keys: Vec<u32> = grads.items.keys().copied().collect();
        item_keys.sort_unstable();

        // Validate everything before mutating anything.
        for &u in &user_keys {
            let g = &grads.users[&u];
            if g.len() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    got: g.len(),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteGradient(format!("user[{u}]")));
            }
        }
        for &i in &item_keys {
            let g = &grads.items[&i];
            if g.len() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    got: g.len(),
                });
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteGradient(format!("item[{i}]")));
            }
        }
        if let Some(gw) = &grads.boundary_w {
            if self.boundary_w.is_none() {
                return Err(ModelError::MissingBoundary);
            }
            if gw.len() != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    got: gw.len(),
                });
            }
            if !gw.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFiniteGradient("boundary_w".into()));
            }
        }

        self.adam.step += 1;
        let t = self.adam.step;
        let bc1 = 1.0 - hyper.beta1.powi(t as i32);
        let bc2 = 1.0 - hyper.beta2.powi(t as i32);

        for &u in &user_keys {
            adam_row(
                self.user_emb.row_mut(u as usize),
                self.adam.m_user.row_mut(u as usize),
                self.adam.v_user.row_mut(u as usize),
                &grads.users[&u],
                hyper,
                hyper.weight_decay,
                bc1,
                bc2,
            );
        }
        for &i in &item_keys {
            adam_row(
                self.item_emb.row_mut(i as usize),
                self.adam.m_item.row_mut(i as usize),
                self.adam.v_item.row_mut(i as usize),
                &grads.items[&i],
                hyper,
                hyper.weight_decay,
                bc1,
                bc2,
            );
        }
        if let Some(gw) = &grads.boundary_w {
            let w = self.boundary_w.as_mut().unwrap();
            let m = self.adam.m_w.as_mut().unwrap();
            let v = self.adam.v_w.as_mut().unwrap();
            // The boundary vector is not an embedding row; no weight decay.
            adam_row(w, m, v, gw, hyper, 0.0, bc1, bc2);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.user_emb.all_finite()
            && self.item_emb.all_finite()
            && self
                .boundary_w
                .as_ref()
                .map_or(true, |w| w.iter().all(|v| v.is_finite()))
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_row(
    theta: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    grad: &[f64],
    hyper: &AdamHyper,
    weight_decay: f64,
    bc1: f64,
    bc2: f64,
) {
    for k in 0..theta.len() {
        let g = grad[k] + weight_decay * theta[k];
        m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
        v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        theta[k] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}

fn xavier_fill(m: &mut Matrix, rng: &mut ChaCha8Rng) {
    let a = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
    for v in m.data_mut() {
        *v = rng.gen_range(-a..a);
    }
}

/// Mean of `E^(0..=L)` under `E^(l+1) = A_norm E^(l)` with the symmetric
/// degree-normalized bipartite adjacency (edge weight
/// `1/sqrt(|N_u| * |N_i|)`). Zero-degree nodes keep only their own
/// `E^(0) / (L+1)` share.
pub fn propagate(
    dataset: &InteractionDataset,
    users_in: &Matrix,
    items_in: &Matrix,
    layers: u32,
) -> (Matrix, Matrix) {
    let d = users_in.cols();
    let nu = users_in.rows();
    let ni = items_in.rows();
    let train = dataset.train();
    let rev = dataset.train_rev();

    let isd_u: Vec<f64> = (0..nu)
        .map(|u| {
            let deg = train.row(u).len();
            if deg == 0 {
                0.0
            } else {
                1.0 / (deg as f64).sqrt()
            }
        })
        .collect();
    let isd_i: Vec<f64> = (0..ni)
        .map(|i| {
            let deg = rev.row(i).len();
            if deg == 0 {
                0.0
            } else {
                1.0 / (deg as f64).sqrt()
            }
        })
        .collect();

    let mut acc_u = users_in.clone();
    let mut acc_i = items_in.clone();
    let mut cur_u = users_in.clone();
    let mut cur_i = items_in.clone();

    for _ in 0..layers {
        let mut next_u = Matrix::zeros(nu, d);
        for u in 0..nu {
            let row = train.row(u);
            if row.is_empty() {
                continue;
            }
            let out = next_u.row_mut(u);
            for &i in row {
                let w = isd_u[u] * isd_i[i as usize];
                let src = cur_i.row(i as usize);
                for k in 0..d {
                    out[k] += w * src[k];
                }
            }
        }
        let mut next_i = Matrix::zeros(ni, d);
        for i in 0..ni {
            let row = rev.row(i);
            if row.is_empty() {
                continue;
            }
            let out = next_i.row_mut(i);
            for &u in row {
                let w = isd_i[i] * isd_u[u as usize];
                let src = cur_u.row(u as usize);
                for k in 0..d {
                    out[k] += w * src[k];
                }
            }
        }
        acc_u.add_assign(&next_u);
        acc_i.add_assign(&next_i);
        cur_u = next_u;
        cur_i = next_i;
    }

    let inv = 1.0 / (layers as f64 + 1.0);
    acc_u.scale(inv);
    acc_i.scale(inv);
    (acc_u, acc_i)
}

/// Score one `(user, item)` pair on backbone outputs.
pub fn pair_score(pe: &Propagated<'_>, u: u32, i: u32, head: ScoreHead) -> f64 {
    let a = pe.users.row(u as usize);
    let b = pe.items.row(i as usize);
    match head {
        ScoreHead::Dot => dot(a, b),
        ScoreHead::NegEuclideanSq => -dist_sq(a, b),
    }
}

/// Batched pair scoring; order-independent per pair.
pub fn score_pairs(pe: &Propagated<'_>, pairs: &[(u32, u32)], head: ScoreHead) -> Vec<f64> {
    pairs.iter().map(|&(u, i)| pair_score(pe, u, i, head)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionDataset;

    fn tiny_dataset() -> InteractionDataset {
        InteractionDataset::from_pairs(vec![(0, vec![0])], vec![])
            .unwrap()
            .0
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ModelState::init(5, 7, 64, Backbone::Mf, false, 42);
        let b = ModelState::init(5, 7, 64, Backbone::Mf, false, 42);
        assert_eq!(a, b);
        assert_eq!(a.user_embeddings().rows(), 5);
        assert_eq!(a.user_embeddings().cols(), 64);
        assert_eq!(a.item_embeddings().rows(), 7);
        let bound_u = (6.0 / (5.0 + 64.0)).sqrt();
        assert!(a.user_embeddings().data().iter().all(|v| v.abs() <= bound_u));
        let bound_i = (6.0 / (7.0 + 64.0)).sqrt();
        assert!(a.item_embeddings().data().iter().all(|v| v.abs() <= bound_i));
        let c = ModelState::init(5, 7, 64, Backbone::Mf, false, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn boundary_is_zero_initialized() {
        let m = ModelState::init(2, 2, 4, Backbone::Mf, true, 1);
        assert_eq!(m.boundary_w().unwrap(), &[0.0; 4]);
    }

    #[test]
    fn zero_layers_is_identity() {
        let ds = tiny_dataset();
        let m = ModelState::init(1, 1, 3, Backbone::Mf, false, 9);
        let (u, i) = propagate(&ds, m.user_embeddings(), m.item_embeddings(), 0);
        assert_eq!(&u, m.user_embeddings());
        assert_eq!(&i, m.item_embeddings());
    }

    #[test]
    fn single_edge_single_layer_averages_endpoints() {
        let ds = tiny_dataset();
        let mut m = ModelState::init(1, 1, 1, Backbone::Gcn { layers: 1 }, false, 0);
        m.user_emb.row_mut(0)[0] = 0.25;
        m.item_emb.row_mut(0)[0] = 0.75;
        let pe = m.forward(&ds);
        // G(u0) = (e_u0 + e_i0) / 2 with unit normalization 1/sqrt(1*1).
        assert!((pe.users.row(0)[0] - 0.5).abs() < 1e-15);
        assert!((pe.items.row(0)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn propagation_matches_dense_operator() {
        // 10 users x 12 items; compare the per-edge accumulation against an
        // explicit dense (U+I)x(U+I) operator applied L times.
        let rows: Vec<(u32, Vec<u32>)> = (0..10)
            .map(|u| {
                let items = (0..12)
                    .filter(|i| (u * 5 + i * 7) % 3 == 0)
                    .map(|i| i as u32)
                    .collect();
                (u as u32, items)
            })
            .collect();
        let ds = InteractionDataset::from_pairs(rows, vec![]).unwrap().0;
        let model = ModelState::init(10, 12, 4, Backbone::Gcn { layers: 3 }, false, 5);
        let (pu, pi) = propagate(&ds, model.user_embeddings(), model.item_embeddings(), 3);

        let n = 10 + 12;
        let d = 4;
        let mut a = vec![vec![0.0f64; n]; n];
        for u in 0..10usize {
            for &i in ds.train().row(u) {
                let w = 1.0
                    / ((ds.train().row(u).len() as f64).sqrt()
                        * (ds.train_rev().row(i as usize).len() as f64).sqrt());
                a[u][10 + i as usize] = w;
                a[10 + i as usize][u] = w;
            }
        }
        let mut e = vec![vec![0.0f64; d]; n];
        for u in 0..10 {
            e[u].copy_from_slice(model.user_embeddings().row(u));
        }
        for i in 0..12 {
            e[10 + i].copy_from_slice(model.item_embeddings().row(i));
        }
        let mut acc = e.clone();
        let mut cur = e;
        for _ in 0..3 {
            let mut next = vec![vec![0.0f64; d]; n];
            for r in 0..n {
                for c in 0..n {
                    if a[r][c] != 0.0 {
                        for k in 0..d {
                            next[r][k] += a[r][c] * cur[c][k];
                        }
                    }
                }
            }
            for r in 0..n {
                for k in 0..d {
                    acc[r][k] += next[r][k];
                }
            }
            cur = next;
        }
        for r in 0..n {
            for k in 0..d {
                acc[r][k] /= 4.0;
            }
        }
        for u in 0..10 {
            for k in 0..d {
                assert!((pu.row(u)[k] - acc[u][k]).abs() <= 1e-12);
            }
        }
        for i in 0..12 {
            for k in 0..d {
                assert!((pi.row(i)[k] - acc[10 + i][k]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn propagation_is_linear() {
        let ds = InteractionDataset::from_pairs(
            vec![(0, vec![0, 1]), (1, vec![1, 2]), (2, vec![0])],
            vec![],
        )
        .unwrap()
        .0;
        let m = ModelState::init(3, 3, 5, Backbone::Gcn { layers: 2 }, false, 11);
        let (pu, pi) = propagate(&ds, m.user_embeddings(), m.item_embeddings(), 2);
        let mut su = m.user_emb.clone();
        su.scale(3.5);
        let mut si = m.item_emb.clone();
        si.scale(3.5);
        let (pu2, pi2) = propagate(&ds, &su, &si, 2);
        for (a, b) in pu.data().iter().zip(pu2.data()) {
            assert!((a * 3.5 - b).abs() <= 1e-12);
        }
        for (a, b) in pi.data().iter().zip(pi2.data()) {
            assert!((a * 3.5 - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn isolated_node_keeps_scaled_self_embedding() {
        // Item 1 exists (it appears in the test split) but has no train
        // edges, so propagation never reaches it.
        let ds = InteractionDataset::from_pairs(
            vec![(0, vec![0]), (1, vec![0])],
            vec![(0, vec![1])],
        )
        .unwrap()
        .0;
        let mut m = ModelState::init(2, 2, 1, Backbone::Gcn { layers: 2 }, false, 2);
        m.item_emb.row_mut(1)[0] = 0.9;
        let pe = m.forward(&ds);
        assert!((pe.items.row(1)[0] - 0.9 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dot_and_distance_heads() {
        let ds = tiny_dataset();
        let mut m = ModelState::init(1, 1, 2, Backbone::Mf, false, 0);
        m.user_emb.row_mut(0).copy_from_slice(&[1.0, 2.0]);
        m.item_emb.row_mut(0).copy_from_slice(&[3.0, -1.0]);
        let pe = m.forward(&ds);
        assert_eq!(pair_score(&pe, 0, 0, ScoreHead::Dot), 1.0);
        assert_eq!(pair_score(&pe, 0, 0, ScoreHead::NegEuclideanSq), -13.0);
        m.item_emb.row_mut(0).copy_from_slice(&[1.0, 2.0]);
        let pe = m.forward(&ds);
        assert_eq!(pair_score(&pe, 0, 0, ScoreHead::NegEuclideanSq), 0.0);
    }

    #[test]
    fn mf_scores_use_raw_tables_exactly() {
        let ds = InteractionDataset::from_pairs(vec![(0, vec![0]), (1, vec![1])], vec![])
            .unwrap()
            .0;
        let m = ModelState::init(2, 2, 8, Backbone::Mf, false, 77);
        let pe = m.forward(&ds);
        for u in 0..2u32 {
            for i in 0..2u32 {
                let raw = dot(m.user_embeddings().row(u as usize), m.item_embeddings().row(i as usize));
                assert_eq!(pair_score(&pe, u, i, ScoreHead::Dot), raw);
            }
        }
    }

    #[test]
    fn adam_first_step_has_bias_corrected_magnitude() {
        let mut m = ModelState::init(1, 1, 1, Backbone::Mf, false, 0);
        let before = m.user_embeddings().row(0)[0];
        let mut grads = Grads::default();
        grads.add_user(0, 1.0, &[1.0]);
        let hyper = AdamHyper::default();
        m.apply_gradients(&grads, &hyper).unwrap();
        let delta = m.user_embeddings().row(0)[0] - before;
        assert!((delta + 1e-3).abs() < 1e-10, "delta {delta}");
        assert_eq!(m.optimizer_step(), 1);
    }

    #[test]
    fn zero_gradients_leave_parameters_untouched() {
        let mut m = ModelState::init(3, 3, 4, Backbone::Mf, false, 8);
        let snapshot = m.user_emb.clone();
        let mut grads = Grads::default();
        grads.add_user(1, 1.0, &[0.0; 4]);
        m.apply_gradients(&grads, &AdamHyper { weight_decay: 0.0, ..Default::default() })
            .unwrap();
        assert_eq!(m.user_emb, snapshot);
        assert_eq!(m.optimizer_step(), 1);
    }

    #[test]
    fn sequential_updates_are_stateful() {
        let mut once = ModelState::init(1, 1, 2, Backbone::Mf, false, 3);
        let mut grads = Grads::default();
        grads.add_user(0, 1.0, &[0.5, -0.25]);
        let hyper = AdamHyper::default();
        once.apply_gradients(&grads, &hyper).unwrap();
        let mut twice = once.clone();
        once.apply_gradients(&grads, &hyper).unwrap();
        twice.apply_gradients(&grads, &hyper).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.optimizer_step(), 2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut m = ModelState::init(2, 2, 2, Backbone::Mf, false, 3);
        let mut grads = Grads::default();
        grads.add_item(1, 1.0, &[f64::NAN, 0.0]);
        let err = m.apply_gradients(&grads, &AdamHyper::default()).unwrap_err();
        assert!(err.to_string().contains("item[1]"));
    }

    #[test]
    fn grads_accumulate_per_row() {
        let mut grads = Grads::default();
        grads.add_user(4, 1.0, &[1.0, 2.0]);
        grads.add_user(4, 0.5, &[2.0, 2.0]);
        assert_eq!(grads.users[&4], vec![2.0, 3.0]);
    }
}
