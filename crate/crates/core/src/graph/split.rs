use rand::seq::SliceRandom;

use super::{build_graph, sign_edges, IndexedRating, SignedBipartiteGraph};
use crate::error::{Error, Result};
use crate::seeded_rng;

/// One train/test partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: SignedBipartiteGraph,
    /// Held-out items rated above the threshold, per user, sorted.
    pub test_positive: Vec<Vec<usize>>,
    /// Every held-out (item, rating) per user, sorted by item.
    pub test_all: Vec<Vec<(usize, f64)>>,
    pub fold_index: usize,
    /// Training ratings equal to the threshold, which carry no sign.
    pub train_dropped: usize,
}

impl DatasetSplit {
    /// Builds a split from `records` and a parallel held-out mask.
    pub fn from_holdout(
        records: &[IndexedRating],
        held_out: &[bool],
        num_users: usize,
        num_items: usize,
        delta: f64,
        fold_index: usize,
    ) -> Result<Self> {
        if records.len() != held_out.len() {
            return Err(Error::contract("holdout mask length differs from records"));
        }
        let mut train = Vec::new();
        let mut test_all = vec![Vec::new(); num_users];
        for (r, &h) in records.iter().zip(held_out) {
            if h {
                if r.user >= num_users || r.item >= num_items {
                    return Err(Error::InvariantViolation(format!(
                        "test pair ({}, {}) out of range",
                        r.user, r.item
                    )));
                }
                test_all[r.user].push((r.item, r.rating));
            } else {
                train.push(*r);
            }
        }
        for list in &mut test_all {
            list.sort_by_key(|&(i, _)| i);
        }
        let test_positive = test_all
            .iter()
            .map(|l| {
                l.iter()
                    .filter(|&&(_, w)| w > delta)
                    .map(|&(i, _)| i)
                    .collect()
            })
            .collect();
        let signed = sign_edges(&train, delta);
        let graph = build_graph(&signed.positive, &signed.negative, num_users, num_items)?;
        Ok(DatasetSplit {
            train: graph,
            test_positive,
            test_all,
            fold_index,
            train_dropped: signed.dropped,
        })
    }

    /// Held-out pairs in `(user, item, rating)` order.
    pub fn test_pairs(&self) -> impl Iterator<Item = IndexedRating> + '_ {
        self.test_all.iter().enumerate().flat_map(|(user, l)| {
            l.iter()
                .map(move |&(item, rating)| IndexedRating { user, item, rating })
        })
    }

    pub fn num_test(&self) -> usize {
        self.test_all.iter().map(Vec::len).sum()
    }
}

/// Per-user random holdout masks: each user with at least two ratings keeps
/// `round(ratio * n)` of them (but at least one) in training.
pub fn holdout_mask(
    records: &[IndexedRating],
    num_users: usize,
    ratio: f64,
    seed: u64,
    fold: usize,
) -> Vec<bool> {
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); num_users];
    for (idx, r) in records.iter().enumerate() {
        by_user[r.user].push(idx);
    }
    let mut rng = seeded_rng(seed, fold as u64);
    let mut mask = vec![false; records.len()];
    for mut idxs in by_user {
        let n = idxs.len();
        if n < 2 {
            continue;
        }
        idxs.sort_by_key(|&k| records[k].item);
        idxs.shuffle(&mut rng);
        let n_test = (((1.0 - ratio) * n as f64).round() as usize).min(n - 1);
        for &k in &idxs[..n_test] {
            mask[k] = true;
        }
    }
    mask
}

/// `num_folds` independent seeded holdout splits at `ratio` training share.
pub fn split_folds(
    records: &[IndexedRating],
    num_users: usize,
    num_items: usize,
    ratio: f64,
    num_folds: usize,
    seed: u64,
    delta: f64,
) -> Result<Vec<DatasetSplit>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} outside (0, 1)")));
    }
    if num_folds == 0 {
        return Err(Error::config("num_folds must be at least 1"));
    }
    if !delta.is_finite() {
        return Err(Error::config("delta must be finite"));
    }
    (0..num_folds)
        .map(|fold| {
            let mask = holdout_mask(records, num_users, ratio, seed, fold);
            DatasetSplit::from_holdout(records, &mask, num_users, num_items, delta, fold)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(users: usize, per_user: usize) -> Vec<IndexedRating> {
        (0..users)
            .flat_map(|u| {
                (0..per_user).map(move |i| IndexedRating {
                    user: u,
                    item: i,
                    rating: if (u + i) % 3 == 0 { 1.0 } else { 4.0 },
                })
            })
            .collect()
    }

    #[test]
    fn eight_two_on_ten_records() {
        let r = recs(1, 10);
        let s = &split_folds(&r, 1, 10, 0.8, 1, 3, 2.5).unwrap()[0];
        assert_eq!(s.num_test(), 2);
        assert_eq!(s.train.num_edges(), 8);
        let r = recs(2, 5);
        let s = &split_folds(&r, 2, 5, 0.8, 1, 3, 2.5).unwrap()[0];
        assert_eq!(s.num_test(), 2);
    }

    #[test]
    fn deterministic_and_folds_differ() {
        let r = recs(20, 12);
        let a = split_folds(&r, 20, 12, 0.8, 2, 11, 2.5).unwrap();
        let b = split_folds(&r, 20, 12, 0.8, 2, 11, 2.5).unwrap();
        let pairs = |s: &DatasetSplit| s.test_pairs().map(|p| (p.user, p.item)).collect::<Vec<_>>();
        assert_eq!(pairs(&a[0]), pairs(&b[0]));
        assert_eq!(pairs(&a[1]), pairs(&b[1]));
        assert_ne!(pairs(&a[0]), pairs(&a[1]));
    }

    #[test]
    fn single_rating_user_stays_in_train() {
        let r = vec![IndexedRating {
            user: 0,
            item: 0,
            rating: 5.0,
        }];
        let s = &split_folds(&r, 1, 1, 0.8, 1, 0, 2.5).unwrap()[0];
        assert_eq!(s.num_test(), 0);
        assert_eq!(s.train.num_edges(), 1);
    }

    #[test]
    fn train_test_disjoint_and_positive_subset() {
        let r = recs(15, 9);
        for s in split_folds(&r, 15, 9, 0.8, 3, 5, 2.5).unwrap() {
            for p in s.test_pairs() {
                assert!(!s.train.is_observed(p.user, p.item));
            }
            for (u, pos) in s.test_positive.iter().enumerate() {
                let expect: Vec<usize> = s.test_all[u]
                    .iter()
                    .filter(|&&(_, w)| w > 2.5)
                    .map(|&(i, _)| i)
                    .collect();
                assert_eq!(pos, &expect);
            }
            assert_eq!(
                s.num_test() + s.train.num_edges() + s.train_dropped,
                r.len()
            );
        }
    }

    #[test]
    fn bad_ratio_rejected() {
        assert!(split_folds(&recs(1, 3), 1, 3, 1.0, 1, 0, 2.5).is_err());
        assert!(split_folds(&recs(1, 3), 1, 3, 0.8, 0, 0, 2.5).is_err());
    }
}
