//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls the propagation, loss, ranking or metric code under
//! test; graphs are only read through their edge list.

#![allow(dead_code)]

use std::collections::HashSet;

use ndarray::Array2;
use rand::Rng;
use signedcf::graph::{IndexedRating, Sign};
use signedcf::{build_graph, SignedBipartiteGraph};

pub fn random_graph<R: Rng>(
    rng: &mut R,
    m: usize,
    n: usize,
    density: f64,
    neg_share: f64,
) -> SignedBipartiteGraph {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for u in 0..m {
        for i in 0..n {
            if rng.random_bool(density) {
                let r = IndexedRating {
                    user: u,
                    item: i,
                    rating: 0.0,
                };
                if rng.random_bool(neg_share) {
                    neg.push(IndexedRating { rating: 1.0, ..r });
                } else {
                    pos.push(IndexedRating { rating: 5.0, ..r });
                }
            }
        }
    }
    build_graph(&pos, &neg, m, n).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// `D_u^{-1/2} A D_i^{-1/2}` restricted to edges of one sign, built densely
/// from the edge list.
pub fn dense_normalized(graph: &SignedBipartiteGraph, sign: Sign) -> Array2<f64> {
    let (m, n) = (graph.num_users(), graph.num_items());
    let mut a = Array2::<f64>::zeros((m, n));
    for e in graph.edges().iter().filter(|e| e.sign == sign) {
        a[[e.user, e.item]] = 1.0;
    }
    let du: Vec<f64> = (0..m).map(|u| a.row(u).sum()).collect();
    let di: Vec<f64> = (0..n).map(|i| a.column(i).sum()).collect();
    for u in 0..m {
        for i in 0..n {
            if a[[u, i]] != 0.0 {
                a[[u, i]] /= du[u].sqrt() * di[i].sqrt();
            }
        }
    }
    a
}

pub struct DenseForward {
    pub pos_user: Vec<Array2<f64>>,
    pub pos_item: Vec<Array2<f64>>,
    pub neg_user: Vec<Array2<f64>>,
    pub neg_item: Vec<Array2<f64>>,
    pub final_pos_user: Array2<f64>,
    pub final_pos_item: Array2<f64>,
    pub final_neg_user: Array2<f64>,
    pub final_neg_item: Array2<f64>,
}

fn mean(v: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = Array2::zeros(v[0].raw_dim());
    for x in v {
        acc += x;
    }
    acc / v.len() as f64
}

pub fn dense_forward(
    graph: &SignedBipartiteGraph,
    e0u: &Array2<f64>,
    e0i: &Array2<f64>,
    layers: usize,
) -> DenseForward {
    let ap = dense_normalized(graph, Sign::Positive);
    let an = dense_normalized(graph, Sign::Negative);
    let mut pu = vec![e0u.clone()];
    let mut pi = vec![e0i.clone()];
    let mut nu = vec![an.dot(e0i)];
    let mut ni = vec![an.t().dot(e0u)];
    for l in 1..=layers {
        pu.push(ap.dot(&pi[l - 1]));
        pi.push(ap.t().dot(&pu[l - 1]));
        if l >= 2 {
            nu.push(ap.dot(&ni[l - 2]));
            ni.push(ap.t().dot(&nu[l - 2]));
        }
    }
    DenseForward {
        final_pos_user: mean(&pu),
        final_pos_item: mean(&pi),
        final_neg_user: mean(&nu),
        final_neg_item: mean(&ni),
        pos_user: pu,
        pos_item: pi,
        neg_user: nu,
        neg_item: ni,
    }
}

pub fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let norm = b.mapv(|x| x * x).sum().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// `(M+N) x (M+N)` symmetric normalized adjacency of the positive graph.
pub fn lightgcn_adjacency(graph: &SignedBipartiteGraph) -> Array2<f64> {
    let (m, n) = (graph.num_users(), graph.num_items());
    let mut a = Array2::<f64>::zeros((m + n, m + n));
    for e in graph.edges().iter().filter(|e| e.sign == Sign::Positive) {
        a[[e.user, m + e.item]] = 1.0;
        a[[m + e.item, e.user]] = 1.0;
    }
    let deg: Vec<f64> = (0..m + n).map(|r| a.row(r).sum()).collect();
    for r in 0..m + n {
        for c in 0..m + n {
            if a[[r, c]] != 0.0 {
                a[[r, c]] /= (deg[r] * deg[c]).sqrt();
            }
        }
    }
    a
}

/// `(1/(L+1)) * sum_l A^l`.
pub fn lightgcn_smoother(graph: &SignedBipartiteGraph, layers: usize) -> Array2<f64> {
    let a = lightgcn_adjacency(graph);
    let k = a.nrows();
    let mut power = Array2::<f64>::eye(k);
    let mut acc = power.clone();
    for _ in 0..layers {
        power = power.dot(&a);
        acc += &power;
    }
    acc / (layers + 1) as f64
}

pub fn stack(user: &Array2<f64>, item: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[user.view(), item.view()]).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain LightGCN + BPR (+ L2 on the layer-0 embeddings): loss and gradient
/// wrt the stacked `(M+N) x d` layer-0 matrix.
pub fn lightgcn_bpr_grad(
    smoother: &Array2<f64>,
    e0: &Array2<f64>,
    num_users: usize,
    triples: &[(usize, usize, usize)],
    lambda: f64,
) -> (f64, Array2<f64>) {
    let fin = smoother.dot(e0);
    let mut g = Array2::<f64>::zeros(fin.raw_dim());
    let b = triples.len() as f64;
    let mut loss = 0.0;
    for &(u, i, j) in triples {
        let (ri, rj) = (num_users + i, num_users + j);
        let x = fin.row(u).dot(&fin.row(ri)) - fin.row(u).dot(&fin.row(rj));
        loss += -sigmoid(x).ln() / b;
        let coef = -(1.0 - sigmoid(x)) / b;
        let gu = (&fin.row(ri) - &fin.row(rj)) * coef;
        let gi = &fin.row(u) * coef;
        let mut row = g.row_mut(u);
        row += &gu;
        let mut row = g.row_mut(ri);
        row += &gi;
        let mut row = g.row_mut(rj);
        row -= &gi;
    }
    let mut grad = smoother.t().dot(&g);
    grad.scaled_add(2.0 * lambda, e0);
    loss += lambda * e0.mapv(|x| x * x).sum();
    (loss, grad)
}

/// One Adam step from zero moments at step 1.
pub fn adam_first_step(theta: &Array2<f64>, grad: &Array2<f64>, lr: f64) -> Array2<f64> {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let m = grad * (1.0 - b1);
    let v = grad.mapv(|g| g * g) * (1.0 - b2);
    let mhat = m / (1.0 - b1);
    let vhat = v / (1.0 - b2);
    theta - &(mhat * lr / (vhat.mapv(f64::sqrt) + eps))
}

pub fn brute_precision_recall(recs: &[usize], relevant: &HashSet<usize>, k: usize) -> (f64, f64) {
    let top: HashSet<usize> = recs.iter().take(k).copied().collect();
    let hits = top.intersection(relevant).count();
    (hits as f64 / k as f64, hits as f64 / relevant.len() as f64)
}

pub fn brute_ndcg(recs: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let gains: Vec<f64> = recs
        .iter()
        .take(k)
        .map(|i| if relevant.contains(i) { 1.0 } else { 0.0 })
        .collect();
    let ideal = vec![1.0; relevant.len().min(k)];
    let dcg = |g: &[f64]| -> f64 {
        g.iter()
            .enumerate()
            .map(|(r, &x)| (2f64.powf(x) - 1.0) / ((r + 2) as f64).ln() * 2f64.ln())
            .sum()
    };
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(&gains) / idcg
    }
}

/// Central difference of `f` wrt every entry of `x`.
pub fn numeric_grad(
    x: &Array2<f64>,
    h: f64,
    mut f: impl FnMut(&Array2<f64>) -> f64,
) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        g[[r, c]] = (up - down) / (2.0 * h);
    }
    g
}

/// `max |a - b| / max(|a|, |b|, floor)` over entries.
pub fn max_rel_err(a: &Array2<f64>, b: &Array2<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Two communities of 50 users. Community `c` rates every item of cluster `c`
/// (items `50c..50c+50`) with 4 or 5 and rates a fixed block of 10 items of the
/// other cluster with 1. Returns the ratings, a held-out mask (10 liked and 2
/// disliked ratings per user) and each user's community-disliked item set.
pub struct Planted {
    pub records: Vec<IndexedRating>,
    pub held_out: Vec<bool>,
    pub disliked: Vec<HashSet<usize>>,
}

pub const PLANTED_USERS: usize = 100;
pub const PLANTED_ITEMS: usize = 100;

pub fn planted<R: Rng>(rng: &mut R) -> Planted {
    use rand::seq::SliceRandom;
    let mut records = Vec::new();
    let mut held_out = Vec::new();
    let mut disliked = Vec::new();
    for u in 0..PLANTED_USERS {
        let c = u / 50;
        let own: Vec<usize> = (50 * c..50 * c + 50).collect();
        let other = 50 * (1 - c);
        let bad: Vec<usize> = (other..other + 10).collect();
        let mut pos_hold = [false; 50];
        pos_hold[..10].fill(true);
        pos_hold.shuffle(rng);
        let mut neg_hold = [false; 10];
        neg_hold[..2].fill(true);
        neg_hold.shuffle(rng);
        for (k, &i) in own.iter().enumerate() {
            let rating = if rng.random_bool(0.5) { 4.0 } else { 5.0 };
            records.push(IndexedRating {
                user: u,
                item: i,
                rating,
            });
            held_out.push(pos_hold[k]);
        }
        for (k, &i) in bad.iter().enumerate() {
            records.push(IndexedRating {
                user: u,
                item: i,
                rating: 1.0,
            });
            held_out.push(neg_hold[k]);
        }
        disliked.push(bad.into_iter().collect());
    }
    Planted {
        records,
        held_out,
        disliked,
    }
}

/// Expected Recall@k of a uniformly random ranking of `candidates` items of
/// which `relevant` are relevant: `k / candidates` (for `k <= candidates`).
pub fn random_recall(k: usize, candidates: usize) -> f64 {
    k.min(candidates) as f64 / candidates as f64
}
