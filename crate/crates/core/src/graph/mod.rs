//! Signed user-item bipartite graph and its construction from rating logs.

mod ingest;
mod split;

pub use ingest::{kcore_filter, parse_ratings, Delimiter, ParsedRatings, RatingRecord, Vocab};
pub use split::{holdout_mask, split_folds, DatasetSplit};

use crate::error::{Error, Result};

/// Edge polarity derived from a rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }
}

/// A rating whose endpoints have been mapped to dense indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexedRating {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedEdge {
    pub user: usize,
    pub item: usize,
    pub sign: Sign,
    pub rating: f64,
}

/// Ratings partitioned by comparing against the threshold.
#[derive(Debug, Clone, Default)]
pub struct SignedEdges {
    pub positive: Vec<IndexedRating>,
    pub negative: Vec<IndexedRating>,
    /// Ratings exactly equal to the threshold.
    pub dropped: usize,
}

/// Splits ratings into liked (`rating > delta`) and disliked (`rating < delta`)
/// edges. Ratings equal to `delta` belong to neither set.
pub fn sign_edges(records: &[IndexedRating], delta: f64) -> SignedEdges {
    let mut out = SignedEdges::default();
    for r in records {
        if r.rating > delta {
            out.positive.push(*r);
        } else if r.rating < delta {
            out.negative.push(*r);
        } else {
            out.dropped += 1;
        }
    }
    out
}

/// Compressed sparse rows of a 0/1 incidence pattern. Column indices within a
/// row are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
}

impl Csr {
    /// Builds from (row, col) pairs; duplicates are kept, so callers dedupe first.
    pub fn from_pairs(num_rows: usize, pairs: &[(usize, usize)]) -> Self {
        let mut counts = vec![0usize; num_rows + 1];
        for &(r, _) in pairs {
            counts[r + 1] += 1;
        }
        for r in 0..num_rows {
            counts[r + 1] += counts[r];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut cols = vec![0usize; pairs.len()];
        for &(r, c) in pairs {
            cols[next[r]] = c;
            next[r] += 1;
        }
        for r in 0..num_rows {
            cols[row_ptr[r]..row_ptr[r + 1]].sort_unstable();
        }
        Csr { row_ptr, cols }
    }

    pub fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn degree(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.row(r).binary_search(&c).is_ok()
    }

    pub fn transpose(&self, num_cols: usize) -> Csr {
        let pairs: Vec<(usize, usize)> = (0..self.num_rows())
            .flat_map(|r| self.row(r).iter().map(move |&c| (c, r)))
            .collect();
        Csr::from_pairs(num_cols, &pairs)
    }

    fn degrees(&self) -> Vec<usize> {
        (0..self.num_rows()).map(|r| self.degree(r)).collect()
    }
}

/// Incidence of one sign in both directions.
#[derive(Debug, Clone)]
pub struct Incidence {
    pub user_items: Csr,
    pub item_users: Csr,
}

/// Immutable signed interaction graph.
#[derive(Debug, Clone)]
pub struct SignedBipartiteGraph {
    num_users: usize,
    num_items: usize,
    pos: Incidence,
    neg: Incidence,
    observed: Csr,
    edges: Vec<SignedEdge>,
    pos_degree_u: Vec<usize>,
    pos_degree_i: Vec<usize>,
    neg_degree_u: Vec<usize>,
    neg_degree_i: Vec<usize>,
}

/// Builds the graph from disjoint positive and negative edge sets.
pub fn build_graph(
    positive: &[IndexedRating],
    negative: &[IndexedRating],
    num_users: usize,
    num_items: usize,
) -> Result<SignedBipartiteGraph> {
    let mut edges = Vec::with_capacity(positive.len() + negative.len());
    for (set, sign) in [(positive, Sign::Positive), (negative, Sign::Negative)] {
        for r in set {
            if r.user >= num_users || r.item >= num_items {
                return Err(Error::InvariantViolation(format!(
                    "edge ({}, {}) outside {num_users} users x {num_items} items",
                    r.user, r.item
                )));
            }
            edges.push(SignedEdge {
                user: r.user,
                item: r.item,
                sign,
                rating: r.rating,
            });
        }
    }
    edges.sort_by_key(|e| (e.user, e.item));
    for w in edges.windows(2) {
        if (w[0].user, w[0].item) == (w[1].user, w[1].item) {
            let what = if w[0].sign == w[1].sign {
                "duplicate edge"
            } else {
                "edge is both positive and negative"
            };
            return Err(Error::InvariantViolation(format!(
                "{what}: ({}, {})",
                w[0].user, w[0].item
            )));
        }
    }

    let pairs_of = |sign: Sign| -> Vec<(usize, usize)> {
        edges
            .iter()
            .filter(|e| e.sign == sign)
            .map(|e| (e.user, e.item))
            .collect()
    };
    let incidence = |pairs: Vec<(usize, usize)>| {
        let user_items = Csr::from_pairs(num_users, &pairs);
        let item_users = user_items.transpose(num_items);
        Incidence {
            user_items,
            item_users,
        }
    };
    let pos = incidence(pairs_of(Sign::Positive));
    let neg = incidence(pairs_of(Sign::Negative));
    let all: Vec<(usize, usize)> = edges.iter().map(|e| (e.user, e.item)).collect();
    let observed = Csr::from_pairs(num_users, &all);

    Ok(SignedBipartiteGraph {
        num_users,
        num_items,
        pos_degree_u: pos.user_items.degrees(),
        pos_degree_i: pos.item_users.degrees(),
        neg_degree_u: neg.user_items.degrees(),
        neg_degree_i: neg.item_users.degrees(),
        pos,
        neg,
        observed,
        edges,
    })
}

impl SignedBipartiteGraph {
    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn positive(&self) -> &Incidence {
        &self.pos
    }

    pub fn negative(&self) -> &Incidence {
        &self.neg
    }

    /// All edges sorted by (user, item).
    pub fn edges(&self) -> &[SignedEdge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_positive(&self) -> usize {
        self.pos.user_items.nnz()
    }

    pub fn num_negative(&self) -> usize {
        self.neg.user_items.nnz()
    }

    /// Items the user interacted with in either sign, sorted.
    pub fn user_items(&self, user: usize) -> &[usize] {
        self.observed.row(user)
    }

    pub fn is_observed(&self, user: usize, item: usize) -> bool {
        self.observed.contains(user, item)
    }

    pub fn edge_sign(&self, user: usize, item: usize) -> Option<Sign> {
        if self.pos.user_items.contains(user, item) {
            Some(Sign::Positive)
        } else if self.neg.user_items.contains(user, item) {
            Some(Sign::Negative)
        } else {
            None
        }
    }

    pub fn pos_degree_u(&self) -> &[usize] {
        &self.pos_degree_u
    }

    pub fn pos_degree_i(&self) -> &[usize] {
        &self.pos_degree_i
    }

    pub fn neg_degree_u(&self) -> &[usize] {
        &self.neg_degree_u
    }

    pub fn neg_degree_i(&self) -> &[usize] {
        &self.neg_degree_i
    }
}
