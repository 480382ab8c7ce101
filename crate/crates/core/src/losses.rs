//! Training objectives over the final embeddings.
//!
//! Each term returns its batch-mean value and *adds* its gradient into the
//! caller's buffers, so disabled terms simply are not called.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Sign, SignedBipartiteGraph, SignedEdge};
use crate::propagation::FinalEmbeddings;
use crate::scalar::{sigmoid, softplus, Scalar};

/// Two-layer rating regressor on `[e_u+ || e_i+]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    /// `2d x 2d`
    pub w1: Array2<T>,
    /// `2d x 1`
    pub w2: Array2<T>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn zeros(dim: usize) -> Self {
        MlpParams {
            w1: Array2::zeros((2 * dim, 2 * dim)),
            w2: Array2::zeros((2 * dim, 1)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows() / 2
    }
}

/// `(user, observed item, unobserved item, sign of the observed edge)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub user: usize,
    pub observed: usize,
    pub unobserved: usize,
    pub sign: Sign,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BprBatch {
    pub triples: Vec<BprTriple>,
    /// Draws dropped because the user had rated every item.
    pub skipped: usize,
}

impl BprBatch {
    /// Distinct users and distinct items (observed or sampled) in the batch.
    pub fn touched_nodes(&self) -> (Vec<usize>, Vec<usize>) {
        let mut users: Vec<usize> = self.triples.iter().map(|t| t.user).collect();
        let mut items: Vec<usize> = self
            .triples
            .iter()
            .flat_map(|t| [t.observed, t.unobserved])
            .collect();
        users.sort_unstable();
        users.dedup();
        items.sort_unstable();
        items.dedup();
        (users, items)
    }
}

/// Per-term values of one step or the mean over an epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossValues {
    pub bpr_pos: f64,
    pub bpr_neg: f64,
    pub mse: f64,
    pub ortho: f64,
    /// Unscaled squared norm of all parameters.
    pub l2: f64,
    pub total: f64,
}

impl LossValues {
    /// Sets `total` from the term values, `[bpr+, bpr-, mse, ortho]` weights and λ.
    pub fn with_total(mut self, weights: [f64; 4], lambda: f64) -> Self {
        let terms = [self.bpr_pos, self.bpr_neg, self.mse, self.ortho];
        self.total = terms.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() + lambda * self.l2;
        self
    }
}

/// Draws `batch_size` observed edges (either sign) uniformly with replacement
/// and pairs each with `negatives_per_obs` items the user never rated.
pub fn sample_batch<R: Rng + ?Sized>(
    graph: &SignedBipartiteGraph,
    batch_size: usize,
    negatives_per_obs: usize,
    rng: &mut R,
) -> Result<BprBatch> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::contract("cannot sample from a graph without edges"));
    }
    let num_items = graph.num_items();
    let mut batch = BprBatch {
        triples: Vec::with_capacity(batch_size * negatives_per_obs),
        skipped: 0,
    };
    for _ in 0..batch_size {
        let e = edges[rng.random_range(0..edges.len())];
        let rated = graph.user_items(e.user);
        if rated.len() >= num_items {
            batch.skipped += 1;
            continue;
        }
        for _ in 0..negatives_per_obs {
            let j = loop {
                let j = rng.random_range(0..num_items);
                if rated.binary_search(&j).is_err() {
                    break j;
                }
            };
            batch.triples.push(BprTriple {
                user: e.user,
                observed: e.item,
                unobserved: j,
                sign: e.sign,
            });
        }
    }
    if batch.skipped > 0 {
        log::warn!(
            "skipped {} draws from users who rated every item",
            batch.skipped
        );
    }
    Ok(batch)
}

/// Draws `batch_size` training edges uniformly with replacement.
pub fn sample_edges<R: Rng + ?Sized>(
    graph: &SignedBipartiteGraph,
    batch_size: usize,
    rng: &mut R,
) -> Vec<SignedEdge> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Vec::new();
    }
    (0..batch_size)
        .map(|_| edges[rng.random_range(0..edges.len())])
        .collect()
}

fn dot<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.dot(&b)
}

/// Mean of `-ln sigmoid(c * y+_ui - y+_uj)` with `c = c1` on positive observed
/// edges and 1 on negative ones.
pub fn bpr_positive<T: Scalar>(
    batch: &BprBatch,
    emb: &FinalEmbeddings<T>,
    c1: T,
    grad: &mut FinalEmbeddings<T>,
) -> T {
    if batch.triples.is_empty() {
        return T::zero();
    }
    let scale = T::one() / T::lit(batch.triples.len() as f64);
    let mut total = T::zero();
    for t in &batch.triples {
        let c = if t.sign == Sign::Positive {
            c1
        } else {
            T::one()
        };
        let eu = emb.pos_user.row(t.user);
        let ei = emb.pos_item.row(t.observed);
        let ej = emb.pos_item.row(t.unobserved);
        let x = c * dot(eu, ei) - dot(eu, ej);
        total += softplus(-x);
        // d/dx of -ln sigmoid(x)
        let g = -sigmoid(-x) * scale;
        let du = (&ei * c - ej) * g;
        grad.pos_user.row_mut(t.user).scaled_add(T::one(), &du);
        grad.pos_item.row_mut(t.observed).scaled_add(g * c, &eu);
        grad.pos_item.row_mut(t.unobserved).scaled_add(-g, &eu);
    }
    total * scale
}

/// Mean of `-ln sigmoid(y-_uj - c * y-_ui)` with `c = c2` on negative observed
/// edges and 1 on positive ones.
pub fn bpr_negative<T: Scalar>(
    batch: &BprBatch,
    emb: &FinalEmbeddings<T>,
    c2: T,
    grad: &mut FinalEmbeddings<T>,
) -> T {
    if batch.triples.is_empty() {
        return T::zero();
    }
    let scale = T::one() / T::lit(batch.triples.len() as f64);
    let mut total = T::zero();
    for t in &batch.triples {
        let c = if t.sign == Sign::Negative {
            c2
        } else {
            T::one()
        };
        let eu = emb.neg_user.row(t.user);
        let ei = emb.neg_item.row(t.observed);
        let ej = emb.neg_item.row(t.unobserved);
        let x = dot(eu, ej) - c * dot(eu, ei);
        total += softplus(-x);
        let g = -sigmoid(-x) * scale;
        let du = (&ej - &ei * c) * g;
        grad.neg_user.row_mut(t.user).scaled_add(T::one(), &du);
        grad.neg_item.row_mut(t.unobserved).scaled_add(g, &eu);
        grad.neg_item.row_mut(t.observed).scaled_add(-g * c, &eu);
    }
    total * scale
}

/// Prediction of the rating regressor for one pair, with the hidden
/// pre-activation returned for backpropagation.
pub fn predict_rating<T: Scalar>(
    user: ArrayView1<T>,
    item: ArrayView1<T>,
    mlp: &MlpParams<T>,
) -> (T, Array1<T>, Array1<T>) {
    let d = user.len();
    let mut input = Array1::zeros(2 * d);
    input.slice_mut(s![..d]).assign(&user);
    input.slice_mut(s![d..]).assign(&item);
    let hidden = input.dot(&mlp.w1);
    let act = hidden.mapv(|h| if h > T::zero() { h } else { T::zero() });
    let pred = act.dot(&mlp.w2.column(0));
    (pred, input, hidden)
}

/// Mean squared error of the regressor over `edges` against their ratings.
pub fn mse_rating<T: Scalar>(
    edges: &[SignedEdge],
    emb: &FinalEmbeddings<T>,
    mlp: &MlpParams<T>,
    grad: &mut FinalEmbeddings<T>,
    grad_mlp: &mut MlpParams<T>,
) -> T {
    if edges.is_empty() {
        return T::zero();
    }
    let d = emb.dim();
    let scale = T::one() / T::lit(edges.len() as f64);
    let mut total = T::zero();
    for e in edges {
        let (pred, input, hidden) =
            predict_rating(emb.pos_user.row(e.user), emb.pos_item.row(e.item), mlp);
        let err = pred - T::lit(e.rating);
        total += err * err;
        let dpred = T::lit(2.0) * err * scale;
        let act = hidden.mapv(|h| if h > T::zero() { h } else { T::zero() });
        grad_mlp.w2.column_mut(0).scaled_add(dpred, &act);
        // ReLU subgradient is 0 at the kink
        let dhidden = Array1::from_shape_fn(hidden.len(), |k| {
            if hidden[k] > T::zero() {
                mlp.w2[[k, 0]] * dpred
            } else {
                T::zero()
            }
        });
        for (j, &x) in input.iter().enumerate() {
            if x != T::zero() {
                grad_mlp.w1.row_mut(j).scaled_add(x, &dhidden);
            }
        }
        let dinput = mlp.w1.dot(&dhidden);
        grad.pos_user
            .row_mut(e.user)
            .scaled_add(T::one(), &dinput.slice(s![..d]));
        grad.pos_item
            .row_mut(e.item)
            .scaled_add(T::one(), &dinput.slice(s![d..]));
    }
    total * scale
}

/// Mean of `(e+ . e-)^2` over `users` plus the same mean over `items`.
pub fn orthogonality<T: Scalar>(
    users: &[usize],
    items: &[usize],
    emb: &FinalEmbeddings<T>,
    grad: &mut FinalEmbeddings<T>,
) -> T {
    let mut total = T::zero();
    let mut side = |nodes: &[usize],
                    pos: &Array2<T>,
                    neg: &Array2<T>,
                    gpos: &mut Array2<T>,
                    gneg: &mut Array2<T>| {
        if nodes.is_empty() {
            return;
        }
        let scale = T::one() / T::lit(nodes.len() as f64);
        let mut sum = T::zero();
        for &n in nodes {
            let (p, q) = (pos.row(n), neg.row(n));
            let d = dot(p, q);
            sum += d * d;
            let g = T::lit(2.0) * d * scale;
            gpos.row_mut(n).scaled_add(g, &q);
            gneg.row_mut(n).scaled_add(g, &p);
        }
        total += sum * scale;
    };
    side(
        users,
        &emb.pos_user,
        &emb.neg_user,
        &mut grad.pos_user,
        &mut grad.neg_user,
    );
    side(
        items,
        &emb.pos_item,
        &emb.neg_item,
        &mut grad.pos_item,
        &mut grad.neg_item,
    );
    total
}

/// Sum of squared entries over `tensors`.
pub fn l2_penalty<T: Scalar>(tensors: &[&Array2<T>]) -> T {
    tensors
        .iter()
        .map(|t| t.iter().map(|&x| x * x).sum::<T>())
        .sum()
}

/// Adds `scale * 2 * theta` to `grad`.
pub fn add_l2_grad<T: Scalar>(theta: &Array2<T>, scale: T, grad: &mut Array2<T>) {
    grad.scaled_add(T::lit(2.0) * scale, theta);
}
