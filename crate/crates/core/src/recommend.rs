//! Top-K ranking with the disliked-item filter.

use std::cmp::Ordering;
use std::io::Write;

use ndarray::Array1;
use rayon::prelude::*;

use crate::graph::SignedBipartiteGraph;
use crate::propagation::FinalEmbeddings;
use crate::scalar::Scalar;

/// Ranked items for one user with their positive scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// `e_u+ . e_i+` for every item.
pub fn score_positive<T: Scalar>(user: usize, emb: &FinalEmbeddings<T>) -> Array1<T> {
    emb.pos_item.dot(&emb.pos_user.row(user))
}

/// `e_u- . e_i-` for every item.
pub fn score_negative<T: Scalar>(user: usize, emb: &FinalEmbeddings<T>) -> Array1<T> {
    emb.neg_item.dot(&emb.neg_user.row(user))
}

/// Items the user has no training edge with, ascending.
pub fn candidates(user: usize, graph: &SignedBipartiteGraph) -> Vec<usize> {
    let rated = graph.user_items(user);
    let mut out = Vec::with_capacity(graph.num_items().saturating_sub(rated.len()));
    let mut r = rated.iter().peekable();
    for i in 0..graph.num_items() {
        if r.peek() == Some(&&i) {
            r.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Descending score, then ascending item index.
fn rank_order<T: Scalar>(scores: &Array1<T>) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// The `n` best of `pool` under [`rank_order`], in rank order.
pub fn top_n<T: Scalar>(scores: &Array1<T>, pool: &[usize], n: usize) -> Vec<usize> {
    let n = n.min(pool.len());
    if n == 0 {
        return Vec::new();
    }
    let cmp = rank_order(scores);
    let mut v = pool.to_vec();
    if n < v.len() {
        v.select_nth_unstable_by(n - 1, &cmp);
        v.truncate(n);
    }
    v.sort_unstable_by(&cmp);
    v
}

/// The user's `k` highest negatively-scored candidates.
pub fn negative_top_k<T: Scalar>(
    user: usize,
    graph: &SignedBipartiteGraph,
    emb: &FinalEmbeddings<T>,
    k: usize,
) -> Vec<usize> {
    top_n(&score_negative(user, emb), &candidates(user, graph), k)
}

/// Number of disliked candidates removed from a list of length K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    Off,
    /// The user's top-K disliked candidates for a list of length K.
    SameAsK,
    Top(usize),
}

impl Filter {
    pub fn size(self, k: usize) -> Option<usize> {
        match self {
            Filter::Off => None,
            Filter::SameAsK => Some(k),
            Filter::Top(f) => Some(f),
        }
    }
}

/// Ranks unrated items by positive score. With `filter_k = Some(f)`, the `f`
/// candidates with the highest negative score are removed and deeper positive
/// candidates move up so the list still holds `k` items when enough remain.
pub fn recommend<T: Scalar>(
    user: usize,
    graph: &SignedBipartiteGraph,
    emb: &FinalEmbeddings<T>,
    k: usize,
    filter_k: Option<usize>,
) -> RecommendationList {
    let pool = candidates(user, graph);
    let pos = score_positive(user, emb);
    let items = match filter_k {
        None => top_n(&pos, &pool, k),
        Some(f) => {
            let mut disliked = top_n(&score_negative(user, emb), &pool, f);
            disliked.sort_unstable();
            top_n(&pos, &pool, k + disliked.len())
                .into_iter()
                .filter(|i| disliked.binary_search(i).is_err())
                .take(k)
                .collect()
        }
    };
    let scores = items.iter().map(|&i| pos[i].as_f64()).collect();
    RecommendationList {
        user,
        items,
        scores,
    }
}

/// [`recommend`] for every user, in user order.
pub fn recommend_all<T: Scalar>(
    graph: &SignedBipartiteGraph,
    emb: &FinalEmbeddings<T>,
    k: usize,
    filter_k: Option<usize>,
) -> Vec<RecommendationList> {
    (0..graph.num_users())
        .into_par_iter()
        .map(|u| recommend(u, graph, emb, k, filter_k))
        .collect()
}

/// One `user_idx item_idx:score ...` line per list, scores to 6 decimals.
pub fn write_dump<W: Write>(lists: &[RecommendationList], mut out: W) -> std::io::Result<()> {
    for l in lists {
        write!(out, "{}", l.user)?;
        for (i, s) in l.items.iter().zip(&l.scores) {
            write!(out, " {i}:{s:.6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, IndexedRating};
    use ndarray::{array, Array2};

    fn graph(rated: &[usize], num_items: usize) -> SignedBipartiteGraph {
        let pos: Vec<_> = rated
            .iter()
            .map(|&item| IndexedRating {
                user: 0,
                item,
                rating: 5.0,
            })
            .collect();
        build_graph(&pos, &[], 1, num_items).unwrap()
    }

    fn emb(
        user_pos: [f64; 2],
        user_neg: [f64; 2],
        items_pos: &[[f64; 2]],
        items_neg: &[[f64; 2]],
    ) -> FinalEmbeddings<f64> {
        let to = |rows: &[[f64; 2]]| Array2::from_shape_fn((rows.len(), 2), |(r, c)| rows[r][c]);
        FinalEmbeddings {
            pos_user: to(&[user_pos]),
            neg_user: to(&[user_neg]),
            pos_item: to(items_pos),
            neg_item: to(items_neg),
        }
    }

    #[test]
    fn scores_match_naive_and_zero_user() {
        let e = emb(
            [0.0, 0.0],
            [1.0, 2.0],
            &[[1.0, 3.0], [2.0, -1.0]],
            &[[0.5, 0.5], [1.0, 0.0]],
        );
        assert_eq!(score_positive(0, &e), array![0.0, 0.0]);
        assert_eq!(score_negative(0, &e), array![1.5, 1.0]);
    }

    #[test]
    fn ties_break_by_index_and_training_items_excluded() {
        let g = graph(&[1], 4);
        let e = emb(
            [1.0, 0.0],
            [0.0, 0.0],
            &[[1.0, 0.0], [9.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            &[[0.0; 2]; 4],
        );
        let r = recommend(0, &g, &e, 3, None);
        assert_eq!(r.items, vec![3, 0, 2]);
        assert_eq!(r.scores, vec![2.0, 1.0, 1.0]);
    }

    /// Six items, user rated item 5. Hand-computed scores:
    /// positive  y+ = [3, 5, 1, 4, 2, _], negative y- = [0, 2, 0, 1, 3, _].
    #[test]
    fn six_item_fixture() {
        let g = graph(&[5], 6);
        let e = emb(
            [1.0, 0.0],
            [0.0, 1.0],
            &[
                [3.0, 0.0],
                [5.0, 0.0],
                [1.0, 0.0],
                [4.0, 0.0],
                [2.0, 0.0],
                [9.0, 0.0],
            ],
            &[
                [0.0, 0.0],
                [0.0, 2.0],
                [0.0, 0.0],
                [0.0, 1.0],
                [0.0, 3.0],
                [0.0, 9.0],
            ],
        );
        assert_eq!(recommend(0, &g, &e, 3, None).items, vec![1, 3, 0]);
        // disliked top-2 = {4, 1}: item 1 leaves, item 4 was not in the list
        assert_eq!(negative_top_k(0, &g, &e, 2), vec![4, 1]);
        assert_eq!(recommend(0, &g, &e, 3, Some(2)).items, vec![3, 0, 2]);
        // disliked top-3 = {4, 1, 3}: only items 0 and 2 remain
        assert_eq!(recommend(0, &g, &e, 3, Some(3)).items, vec![0, 2]);
    }

    #[test]
    fn disjoint_filter_is_noop() {
        let g = graph(&[], 4);
        let e = emb(
            [1.0, 0.0],
            [0.0, 1.0],
            &[[4.0, 0.0], [3.0, 0.0], [2.0, 0.0], [1.0, 0.0]],
            &[[0.0, 0.0], [0.0, 0.0], [0.0, 5.0], [0.0, 6.0]],
        );
        assert_eq!(
            recommend(0, &g, &e, 2, Some(2)),
            recommend(0, &g, &e, 2, None)
        );
    }

    #[test]
    fn dump_format() {
        let l = vec![RecommendationList {
            user: 3,
            items: vec![7, 1],
            scores: vec![0.5, -1.0 / 3.0],
        }];
        let mut buf = Vec::new();
        write_dump(&l, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "3 7:0.500000 1:-0.333333\n"
        );
    }
}
