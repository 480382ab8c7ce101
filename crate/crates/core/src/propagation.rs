//! Dual-channel signed propagation.
//!
//! Layer 1 aggregates over positive edges into the positive channel and over
//! negative edges into the negative channel. Every later layer moves *both*
//! channels along positive edges only. Each edge carries the symmetric weight
//! `1 / (sqrt(deg_u) * sqrt(deg_i))` using degrees of the edge's own sign.
//! Final embeddings average layers `0..=L` (positive) and `1..=L` (negative).

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Csr, SignedBipartiteGraph};
use crate::scalar::Scalar;

pub const MAX_LAYERS: usize = 8;

/// Positive and negative embeddings for every user and item.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEmbeddings<T> {
    pub pos_user: Array2<T>,
    pub pos_item: Array2<T>,
    pub neg_user: Array2<T>,
    pub neg_item: Array2<T>,
}

/// The averaged output of propagation; also used for gradients wrt it.
pub type FinalEmbeddings<T> = DualEmbeddings<T>;

impl<T: Scalar> DualEmbeddings<T> {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        DualEmbeddings {
            pos_user: Array2::zeros((num_users, dim)),
            pos_item: Array2::zeros((num_items, dim)),
            neg_user: Array2::zeros((num_users, dim)),
            neg_item: Array2::zeros((num_items, dim)),
        }
    }

    pub fn num_users(&self) -> usize {
        self.pos_user.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.pos_item.nrows()
    }

    pub fn dim(&self) -> usize {
        self.pos_user.ncols()
    }

    pub fn matrices(&self) -> [&Array2<T>; 4] {
        [
            &self.pos_user,
            &self.pos_item,
            &self.neg_user,
            &self.neg_item,
        ]
    }

    pub fn matrices_mut(&mut self) -> [&mut Array2<T>; 4] {
        [
            &mut self.pos_user,
            &mut self.pos_item,
            &mut self.neg_user,
            &mut self.neg_item,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.matrices()
            .iter()
            .all(|m| m.iter().all(|x| x.is_finite()))
    }

    fn check_shape(&self, num_users: usize, num_items: usize, dim: usize) -> Result<()> {
        let ok = self.pos_user.dim() == (num_users, dim)
            && self.neg_user.dim() == (num_users, dim)
            && self.pos_item.dim() == (num_items, dim)
            && self.neg_item.dim() == (num_items, dim);
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "expected {num_users}/{num_items} rows of width {dim}"
            )))
        }
    }
}

/// Sparse rows with per-entry weights.
#[derive(Debug, Clone)]
struct WeightedCsr<T> {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> WeightedCsr<T> {
    fn normalized(rows: &Csr, row_deg: &[usize], col_deg: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.num_rows() + 1);
        let mut cols = Vec::with_capacity(rows.nnz());
        let mut vals = Vec::with_capacity(rows.nnz());
        row_ptr.push(0);
        for (r, &deg) in row_deg.iter().enumerate().take(rows.num_rows()) {
            for &c in rows.row(r) {
                let norm = (deg as f64).sqrt() * (col_deg[c] as f64).sqrt();
                cols.push(c);
                vals.push(if norm > 0.0 {
                    T::lit(1.0 / norm)
                } else {
                    T::zero()
                });
            }
            row_ptr.push(cols.len());
        }
        WeightedCsr {
            row_ptr,
            cols,
            vals,
        }
    }

    fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// `out[r] = sum_c w[r, c] * x[c]`.
    fn spmm(&self, x: ArrayView2<T>) -> Array2<T> {
        let dim = x.ncols();
        let mut out = Array2::<T>::zeros((self.num_rows(), dim));
        if dim == 0 {
            return out;
        }
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        out.as_slice_mut()
            .expect("fresh array is contiguous")
            .par_chunks_mut(dim)
            .with_min_len(64)
            .enumerate()
            .for_each(|(r, row)| {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let w = self.vals[k];
                    let src = &xs[self.cols[k] * dim..(self.cols[k] + 1) * dim];
                    for (o, &s) in row.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
            });
        out
    }
}

#[derive(Debug, Clone)]
struct NormalizedAdjacency<T> {
    /// user <- item aggregation (rows = users).
    to_users: WeightedCsr<T>,
    /// item <- user aggregation (rows = items); the transpose of `to_users`.
    to_items: WeightedCsr<T>,
}

/// Sparse propagation operators of one graph, prepared for element type `T`.
#[derive(Debug, Clone)]
pub struct Propagator<T> {
    num_users: usize,
    num_items: usize,
    pos: NormalizedAdjacency<T>,
    neg: NormalizedAdjacency<T>,
}

/// Per-layer embeddings retained by a forward pass.
#[derive(Debug, Clone)]
pub struct EmbeddingState<T> {
    /// Layers `0..=L`; layer 0 is the trainable input.
    pub layers_pos_user: Vec<Array2<T>>,
    pub layers_pos_item: Vec<Array2<T>>,
    /// Layers `1..=L` at indices `0..L`.
    pub layers_neg_user: Vec<Array2<T>>,
    pub layers_neg_item: Vec<Array2<T>>,
    pub finals: FinalEmbeddings<T>,
}

impl<T: Scalar> EmbeddingState<T> {
    pub fn num_layers(&self) -> usize {
        self.layers_neg_user.len()
    }

    pub fn dim(&self) -> usize {
        self.finals.dim()
    }

    pub fn e0_user(&self) -> &Array2<T> {
        &self.layers_pos_user[0]
    }

    pub fn e0_item(&self) -> &Array2<T> {
        &self.layers_pos_item[0]
    }

    /// Layer `l` in `1..=L` as a dual quadruple.
    pub fn layer(&self, l: usize) -> DualEmbeddings<T> {
        DualEmbeddings {
            pos_user: self.layers_pos_user[l].clone(),
            pos_item: self.layers_pos_item[l].clone(),
            neg_user: self.layers_neg_user[l - 1].clone(),
            neg_item: self.layers_neg_item[l - 1].clone(),
        }
    }
}

impl<T: Scalar> Propagator<T> {
    pub fn new(graph: &SignedBipartiteGraph) -> Self {
        let adj = |inc: &crate::graph::Incidence, du: &[usize], di: &[usize]| NormalizedAdjacency {
            to_users: WeightedCsr::normalized(&inc.user_items, du, di),
            to_items: WeightedCsr::normalized(&inc.item_users, di, du),
        };
        Propagator {
            num_users: graph.num_users(),
            num_items: graph.num_items(),
            pos: adj(graph.positive(), graph.pos_degree_u(), graph.pos_degree_i()),
            neg: adj(graph.negative(), graph.neg_degree_u(), graph.neg_degree_i()),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    fn check_inputs(&self, user: &Array2<T>, item: &Array2<T>) -> Result<()> {
        if user.nrows() != self.num_users
            || item.nrows() != self.num_items
            || user.ncols() != item.ncols()
        {
            return Err(Error::contract(format!(
                "embedding shapes {:?}/{:?} do not fit {} users x {} items",
                user.dim(),
                item.dim(),
                self.num_users,
                self.num_items
            )));
        }
        Ok(())
    }

    pub fn first_layer(
        &self,
        e0_user: &Array2<T>,
        e0_item: &Array2<T>,
    ) -> Result<DualEmbeddings<T>> {
        self.check_inputs(e0_user, e0_item)?;
        Ok(DualEmbeddings {
            pos_user: self.pos.to_users.spmm(e0_item.view()),
            pos_item: self.pos.to_items.spmm(e0_user.view()),
            neg_user: self.neg.to_users.spmm(e0_item.view()),
            neg_item: self.neg.to_items.spmm(e0_user.view()),
        })
    }

    pub fn higher_layer(&self, prev: &DualEmbeddings<T>) -> Result<DualEmbeddings<T>> {
        prev.check_shape(self.num_users, self.num_items, prev.dim())?;
        Ok(DualEmbeddings {
            pos_user: self.pos.to_users.spmm(prev.pos_item.view()),
            pos_item: self.pos.to_items.spmm(prev.pos_user.view()),
            neg_user: self.pos.to_users.spmm(prev.neg_item.view()),
            neg_item: self.pos.to_items.spmm(prev.neg_user.view()),
        })
    }

    pub fn forward(
        &self,
        e0_user: &Array2<T>,
        e0_item: &Array2<T>,
        layers: usize,
    ) -> Result<EmbeddingState<T>> {
        check_layers(layers)?;
        let mut current = self.first_layer(e0_user, e0_item)?;
        let mut pos_user = vec![e0_user.clone()];
        let mut pos_item = vec![e0_item.clone()];
        let mut neg_user = Vec::with_capacity(layers);
        let mut neg_item = Vec::with_capacity(layers);
        for l in 1..=layers {
            if l > 1 {
                current = self.higher_layer(&current)?;
            }
            pos_user.push(current.pos_user.clone());
            pos_item.push(current.pos_item.clone());
            neg_user.push(current.neg_user.clone());
            neg_item.push(current.neg_item.clone());
        }
        let finals = combine_layers(&pos_user, &pos_item, &neg_user, &neg_item)?;
        Ok(EmbeddingState {
            layers_pos_user: pos_user,
            layers_pos_item: pos_item,
            layers_neg_user: neg_user,
            layers_neg_item: neg_item,
            finals,
        })
    }

    /// Gradients wrt the layer-0 embeddings given gradients wrt the finals.
    ///
    /// The forward map is linear, so this applies the transposed operators from
    /// the top layer down, adding each layer's share of the averaging.
    pub fn backward(
        &self,
        state: &EmbeddingState<T>,
        grad: &FinalEmbeddings<T>,
    ) -> Result<(Array2<T>, Array2<T>)> {
        let layers = state.num_layers();
        check_layers(layers)?;
        if state.layers_pos_user.len() != layers + 1 || state.layers_pos_item.len() != layers + 1 {
            return Err(Error::contract("forward state is incomplete"));
        }
        grad.check_shape(self.num_users, self.num_items, state.dim())?;

        let pos_share = T::one() / T::lit((layers + 1) as f64);
        let neg_share = T::one() / T::lit(layers as f64);

        // positive channel: layers L..=0
        let mut g_user = &grad.pos_user * pos_share;
        let mut g_item = &grad.pos_item * pos_share;
        for _ in 0..layers {
            let next_user = self.pos.to_users.spmm(g_item.view()) + &grad.pos_user * pos_share;
            let next_item = self.pos.to_items.spmm(g_user.view()) + &grad.pos_item * pos_share;
            g_user = next_user;
            g_item = next_item;
        }
        let (mut e0_user, mut e0_item) = (g_user, g_item);

        // negative channel: layers L..=1 along positive edges, then into layer 0
        // through the negative edges
        let mut n_user = &grad.neg_user * neg_share;
        let mut n_item = &grad.neg_item * neg_share;
        for _ in 1..layers {
            let next_user = self.pos.to_users.spmm(n_item.view()) + &grad.neg_user * neg_share;
            let next_item = self.pos.to_items.spmm(n_user.view()) + &grad.neg_item * neg_share;
            n_user = next_user;
            n_item = next_item;
        }
        e0_user += &self.neg.to_users.spmm(n_item.view());
        e0_item += &self.neg.to_items.spmm(n_user.view());
        Ok((e0_user, e0_item))
    }
}

fn check_layers(layers: usize) -> Result<()> {
    if layers == 0 {
        return Err(Error::config("at least one propagation layer is required"));
    }
    if layers > MAX_LAYERS {
        return Err(Error::config(format!(
            "at most {MAX_LAYERS} propagation layers"
        )));
    }
    Ok(())
}

fn mean_of<T>(layers: &[Array2<T>]) -> Array2<T>
where
    T: Scalar,
{
    let mut acc = layers[0].clone();
    for m in &layers[1..] {
        acc += m;
    }
    acc / T::lit(layers.len() as f64)
}

/// Positive finals average `pos_*` (layers `0..=L`), negative finals average
/// `neg_*` (layers `1..=L`).
pub fn combine_layers<T: Scalar>(
    pos_user: &[Array2<T>],
    pos_item: &[Array2<T>],
    neg_user: &[Array2<T>],
    neg_item: &[Array2<T>],
) -> Result<FinalEmbeddings<T>> {
    let layers = neg_user.len();
    check_layers(layers)?;
    if neg_item.len() != layers || pos_user.len() != layers + 1 || pos_item.len() != layers + 1 {
        return Err(Error::contract(
            "positive channel needs L+1 layers and negative channel L layers",
        ));
    }
    Ok(DualEmbeddings {
        pos_user: mean_of(pos_user),
        pos_item: mean_of(pos_item),
        neg_user: mean_of(neg_user),
        neg_item: mean_of(neg_item),
    })
}

pub fn propagate_first_layer<T: Scalar>(
    graph: &SignedBipartiteGraph,
    e0_user: &Array2<T>,
    e0_item: &Array2<T>,
) -> Result<DualEmbeddings<T>> {
    Propagator::new(graph).first_layer(e0_user, e0_item)
}

pub fn propagate_higher_layer<T: Scalar>(
    graph: &SignedBipartiteGraph,
    prev: &DualEmbeddings<T>,
) -> Result<DualEmbeddings<T>> {
    Propagator::new(graph).higher_layer(prev)
}

pub fn full_forward<T: Scalar>(
    graph: &SignedBipartiteGraph,
    e0_user: &Array2<T>,
    e0_item: &Array2<T>,
    layers: usize,
) -> Result<EmbeddingState<T>> {
    Propagator::new(graph).forward(e0_user, e0_item, layers)
}

pub fn backward<T: Scalar>(
    graph: &SignedBipartiteGraph,
    state: &EmbeddingState<T>,
    grad: &FinalEmbeddings<T>,
) -> Result<(Array2<T>, Array2<T>)> {
    Propagator::new(graph).backward(state, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, IndexedRating};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};

    fn r(user: usize, item: usize) -> IndexedRating {
        IndexedRating {
            user,
            item,
            rating: 0.0,
        }
    }

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Dense `D^-1/2 A D^-1/2` restricted to user rows, computed from scratch.
    fn dense_norm(edges: &[(usize, usize)], m: usize, n: usize) -> Array2<f64> {
        let mut a = Array2::<f64>::zeros((m, n));
        for &(u, i) in edges {
            a[[u, i]] = 1.0;
        }
        let du: Vec<f64> = (0..m).map(|u| a.row(u).sum()).collect();
        let di: Vec<f64> = (0..n).map(|i| a.column(i).sum()).collect();
        Array2::from_shape_fn((m, n), |(u, i)| {
            if a[[u, i]] > 0.0 {
                1.0 / (du[u].sqrt() * di[i].sqrt())
            } else {
                0.0
            }
        })
    }

    #[test]
    fn single_neighbor_copies_embedding() {
        let g = build_graph(&[r(0, 0)], &[], 1, 1).unwrap();
        let e0u = array![[1.0, 2.0]];
        let e0i = array![[3.0, -1.0]];
        let l1 = propagate_first_layer(&g, &e0u, &e0i).unwrap();
        assert_eq!(l1.pos_user, e0i);
        assert_eq!(l1.pos_item, e0u);
        assert_eq!(l1.neg_user, Array2::zeros((1, 2)));

        let st = full_forward(&g, &e0u, &e0i, 1).unwrap();
        assert_eq!(st.finals.pos_user, (&e0u + &e0i) / 2.0);
        assert_eq!(st.finals.neg_user, Array2::zeros((1, 2)));
    }

    #[test]
    fn first_and_higher_layers_match_dense() {
        let pos = [r(0, 0), r(0, 1), r(1, 1), r(2, 2)];
        let neg = [r(1, 0), r(2, 1)];
        let g = build_graph(&pos, &neg, 3, 3).unwrap();
        let ap = dense_norm(&[(0, 0), (0, 1), (1, 1), (2, 2)], 3, 3);
        let an = dense_norm(&[(1, 0), (2, 1)], 3, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (eu, ei) = (random(3, 4, &mut rng), random(3, 4, &mut rng));
        let l1 = propagate_first_layer(&g, &eu, &ei).unwrap();
        let close = |a: &Array2<f64>, b: &Array2<f64>| (a - b).iter().all(|x| x.abs() < 1e-12);
        assert!(close(&l1.pos_user, &ap.dot(&ei)));
        assert!(close(&l1.pos_item, &ap.t().dot(&eu)));
        assert!(close(&l1.neg_user, &an.dot(&ei)));
        assert!(close(&l1.neg_item, &an.t().dot(&eu)));
        let l2 = propagate_higher_layer(&g, &l1).unwrap();
        assert!(close(&l2.neg_user, &ap.dot(&l1.neg_item)));
        assert!(close(&l2.neg_item, &ap.t().dot(&l1.neg_user)));
        assert!(close(&l2.pos_user, &ap.dot(&l1.pos_item)));
    }

    #[test]
    fn zero_negative_in_gives_zero_out_and_no_positive_edges_gives_zero() {
        let g = build_graph(&[r(0, 0), r(1, 1)], &[r(0, 1)], 2, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let prev = DualEmbeddings {
            pos_user: random(2, 3, &mut rng),
            pos_item: random(2, 3, &mut rng),
            neg_user: Array2::zeros((2, 3)),
            neg_item: Array2::zeros((2, 3)),
        };
        let next = propagate_higher_layer(&g, &prev).unwrap();
        assert!(next.neg_user.iter().all(|&x| x == 0.0));
        assert!(next.neg_item.iter().all(|&x| x == 0.0));

        let only_neg = build_graph(&[], &[r(0, 1)], 2, 2).unwrap();
        let next = propagate_higher_layer(&only_neg, &prev).unwrap();
        assert!(next.matrices().iter().all(|m| m.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn combine_constant_layers_and_layer_errors() {
        let c = Array2::from_elem((2, 2), 0.7f64);
        let f = combine_layers(
            &[c.clone(), c.clone(), c.clone()],
            &[c.clone(), c.clone(), c.clone()],
            &[c.clone(), c.clone()],
            &[c.clone(), c.clone()],
        )
        .unwrap();
        for m in f.matrices() {
            assert!(m.iter().all(|&x| (x - 0.7).abs() < 1e-15));
        }
        assert!(matches!(
            combine_layers::<f64>(std::slice::from_ref(&c), std::slice::from_ref(&c), &[], &[]),
            Err(Error::Config(_))
        ));
        let g = build_graph(&[r(0, 0)], &[], 1, 1).unwrap();
        assert!(full_forward(
            &g,
            &c.slice(ndarray::s![..1, ..]).to_owned(),
            &c.slice(ndarray::s![..1, ..]).to_owned(),
            0
        )
        .is_err());
        assert!(matches!(
            full_forward(&g, &c, &c, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn backward_sparsity_and_zero_gradient() {
        let g = build_graph(&[r(0, 0), r(0, 2), r(1, 1)], &[r(1, 2)], 2, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let st = full_forward(&g, &random(2, 2, &mut rng), &random(3, 2, &mut rng), 1).unwrap();
        let mut grad = DualEmbeddings::<f64>::zeros(2, 3, 2);
        let (gu, gi) = backward(&g, &st, &grad).unwrap();
        assert!(gu.iter().chain(gi.iter()).all(|&x| x == 0.0));

        grad.pos_user.row_mut(0).fill(1.0);
        let (_, gi) = backward(&g, &st, &grad).unwrap();
        let nonzero: Vec<usize> = (0..3)
            .filter(|&i| gi.row(i).iter().any(|&x| x != 0.0))
            .collect();
        assert_eq!(nonzero, vec![0, 2]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pos = [r(0, 0), r(0, 1), r(1, 1), r(2, 0), r(2, 2), r(3, 2)];
        let neg = [r(1, 0), r(3, 1), r(0, 2)];
        let g = build_graph(&pos, &neg, 4, 3).unwrap();
        let (eu, ei) = (random(4, 3, &mut rng), random(3, 3, &mut rng));
        let weights = DualEmbeddings {
            pos_user: random(4, 3, &mut rng),
            pos_item: random(3, 3, &mut rng),
            neg_user: random(4, 3, &mut rng),
            neg_item: random(3, 3, &mut rng),
        };
        // loss = sum of squares of weighted finals, nonlinear so the check is meaningful
        let loss = |eu: &Array2<f64>, ei: &Array2<f64>| {
            let f = full_forward(&g, eu, ei, 3).unwrap().finals;
            f.matrices()
                .iter()
                .zip(weights.matrices())
                .map(|(a, w)| (*a * w).mapv(|x| x * x).sum())
                .sum::<f64>()
        };
        let st = full_forward(&g, &eu, &ei, 3).unwrap();
        let f = &st.finals;
        let upstream = DualEmbeddings {
            pos_user: &f.pos_user * &weights.pos_user * &weights.pos_user * 2.0,
            pos_item: &f.pos_item * &weights.pos_item * &weights.pos_item * 2.0,
            neg_user: &f.neg_user * &weights.neg_user * &weights.neg_user * 2.0,
            neg_item: &f.neg_item * &weights.neg_item * &weights.neg_item * 2.0,
        };
        let (gu, gi) = backward(&g, &st, &upstream).unwrap();
        let h = 1e-4;
        for (which, analytic) in [(0, &gu), (1, &gi)] {
            for idx in ndarray::indices(analytic.dim()) {
                let (mut up, mut dn) = ((eu.clone(), ei.clone()), (eu.clone(), ei.clone()));
                if which == 0 {
                    up.0[idx] += h;
                    dn.0[idx] -= h;
                } else {
                    up.1[idx] += h;
                    dn.1[idx] -= h;
                }
                let fd = (loss(&up.0, &up.1) - loss(&dn.0, &dn.1)) / (2.0 * h);
                let a = analytic[idx];
                assert!(
                    (a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1e-3),
                    "{a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn f32_agrees_with_f64() {
        let g = build_graph(&[r(0, 0), r(1, 0), r(1, 1)], &[r(0, 1)], 2, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (eu, ei) = (random(2, 4, &mut rng), random(2, 4, &mut rng));
        let d = full_forward(&g, &eu, &ei, 2).unwrap().finals;
        let s = full_forward(&g, &eu.mapv(|x| x as f32), &ei.mapv(|x| x as f32), 2)
            .unwrap()
            .finals;
        for (a, b) in d.matrices().iter().zip(s.matrices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - *y as f64).abs() < 1e-5);
            }
        }
    }
}
