//! Prepared dataset directories: vocabularies, indexed ratings, per-fold test
//! manifests and summary statistics.
//!
//! Layout:
//! - `users.vocab`, `items.vocab`
//! - `ratings.txt`: every rating kept by k-core filtering, `user_idx item_idx rating`
//! - `fold_{k}.test`: held-out pairs of fold `k` in the same format
//! - `stats.txt`: `key = value` lines

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{
    holdout_mask, kcore_filter, sign_edges, DatasetSplit, IndexedRating, RatingRecord, Vocab,
};

pub const USERS_VOCAB: &str = "users.vocab";
pub const ITEMS_VOCAB: &str = "items.vocab";
pub const RATINGS_FILE: &str = "ratings.txt";
pub const STATS_FILE: &str = "stats.txt";

pub fn fold_file(fold: usize) -> String {
    format!("fold_{fold}.test")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub positive: usize,
    pub negative: usize,
    /// Ratings equal to the threshold.
    pub unsigned: usize,
}

impl DatasetStats {
    pub fn compute(records: &[IndexedRating], users: usize, items: usize, delta: f64) -> Self {
        let signed = sign_edges(records, delta);
        DatasetStats {
            users,
            items,
            interactions: records.len(),
            positive: signed.positive.len(),
            negative: signed.negative.len(),
            unsigned: signed.dropped,
        }
    }

    pub fn density(&self) -> f64 {
        if self.users == 0 || self.items == 0 {
            return 0.0;
        }
        self.interactions as f64 / (self.users as f64 * self.items as f64)
    }

    /// Negatives per positive, the `x` in `1:x`.
    pub fn neg_per_pos(&self) -> f64 {
        if self.positive == 0 {
            return f64::INFINITY;
        }
        self.negative as f64 / self.positive as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "users = {}", self.users);
        let _ = writeln!(s, "items = {}", self.items);
        let _ = writeln!(s, "interactions = {}", self.interactions);
        let _ = writeln!(s, "density = {:.6}", self.density());
        let _ = writeln!(s, "positive = {}", self.positive);
        let _ = writeln!(s, "negative = {}", self.negative);
        let _ = writeln!(s, "unsigned = {}", self.unsigned);
        let _ = writeln!(s, "pos_neg_ratio = 1:{:.2}", self.neg_per_pos());
        s
    }
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub users: Vocab,
    pub items: Vocab,
    pub records: Vec<IndexedRating>,
    /// Held-out mask over `records` for each fold.
    pub folds: Vec<Vec<bool>>,
    pub delta: f64,
}

impl PreparedDataset {
    /// k-core filter, index and split raw records using the settings in `config`.
    pub fn prepare(raw: &[RatingRecord], config: &TrainConfig) -> Result<Self> {
        let kept = kcore_filter(raw, config.min_user, config.min_item);
        if kept.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "k-core filtering ({}, {}) removed every rating",
                config.min_user, config.min_item
            )));
        }
        let mut users = Vocab::default();
        let mut items = Vocab::default();
        let records: Vec<IndexedRating> = kept
            .iter()
            .map(|r| IndexedRating {
                user: users.insert(&r.user_id),
                item: items.insert(&r.item_id),
                rating: r.rating,
            })
            .collect();
        let folds = (0..config.num_folds)
            .map(|f| holdout_mask(&records, users.len(), config.split_ratio, config.seed, f))
            .collect();
        Ok(PreparedDataset {
            users,
            items,
            records,
            folds,
            delta: config.delta,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::compute(
            &self.records,
            self.num_users(),
            self.num_items(),
            self.delta,
        )
    }

    pub fn split(&self, fold: usize) -> Result<DatasetSplit> {
        let mask = self
            .folds
            .get(fold)
            .ok_or_else(|| Error::contract(format!("fold {fold} of {}", self.folds.len())))?;
        DatasetSplit::from_holdout(
            &self.records,
            mask,
            self.num_users(),
            self.num_items(),
            self.delta,
            fold,
        )
    }

    pub fn splits(&self) -> Result<Vec<DatasetSplit>> {
        (0..self.folds.len()).map(|f| self.split(f)).collect()
    }

    /// Paths of every file written, in a fixed order.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join(USERS_VOCAB);
        self.users.write(&path)?;
        written.push(path);
        let path = dir.join(ITEMS_VOCAB);
        self.items.write(&path)?;
        written.push(path);

        let path = dir.join(RATINGS_FILE);
        write_triples(&path, self.records.iter())?;
        written.push(path);
        for (f, mask) in self.folds.iter().enumerate() {
            let path = dir.join(fold_file(f));
            let held = self
                .records
                .iter()
                .zip(mask)
                .filter(|(_, &h)| h)
                .map(|(r, _)| r);
            write_triples(&path, held)?;
            written.push(path);
        }
        let path = dir.join(STATS_FILE);
        fs::write(&path, self.stats().to_text())?;
        written.push(path);
        Ok(written)
    }

    /// Reads a directory produced by [`PreparedDataset::write`]; folds are
    /// discovered as `fold_0.test`, `fold_1.test`, ... until the first gap.
    pub fn load(dir: &Path, delta: f64) -> Result<Self> {
        let users = Vocab::read(&dir.join(USERS_VOCAB))?;
        let items = Vocab::read(&dir.join(ITEMS_VOCAB))?;
        let records = read_triples(&dir.join(RATINGS_FILE))?;
        if records.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "{} has no ratings",
                dir.display()
            )));
        }
        for r in &records {
            if r.user >= users.len() || r.item >= items.len() {
                return Err(Error::format(
                    dir.join(RATINGS_FILE).display().to_string(),
                    format!("pair ({}, {}) outside vocabularies", r.user, r.item),
                ));
            }
        }
        let mut folds = Vec::new();
        loop {
            let path = dir.join(fold_file(folds.len()));
            if !path.exists() {
                break;
            }
            let held: HashSet<(usize, usize)> = read_triples(&path)?
                .iter()
                .map(|r| (r.user, r.item))
                .collect();
            let mask: Vec<bool> = records
                .iter()
                .map(|r| held.contains(&(r.user, r.item)))
                .collect();
            if mask.iter().filter(|&&h| h).count() != held.len() {
                return Err(Error::format(
                    path.display().to_string(),
                    "test pair missing from ratings",
                ));
            }
            folds.push(mask);
        }
        if folds.is_empty() {
            return Err(Error::format(
                dir.display().to_string(),
                "no fold manifests",
            ));
        }
        Ok(PreparedDataset {
            users,
            items,
            records,
            folds,
            delta,
        })
    }
}

fn write_triples<'a>(path: &Path, rows: impl Iterator<Item = &'a IndexedRating>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        writeln!(f, "{} {} {}", r.user, r.item, r.rating)?;
    }
    f.flush()?;
    Ok(())
}

fn read_triples(path: &Path) -> Result<Vec<IndexedRating>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format(path.display().to_string(), format!("line {}", n + 1));
        let mut it = line.split_whitespace();
        let user = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let item = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let rating: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        out.push(IndexedRating { user, item, rating });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw() -> Vec<RatingRecord> {
        let mut v = Vec::new();
        for u in 0..8 {
            for i in 0..6 {
                if (u + i) % 4 != 0 {
                    let w = if (u * i) % 5 == 0 { 1.0 } else { 4.5 };
                    v.push(RatingRecord::new(format!("u{u}"), format!("i{i}"), w));
                }
            }
        }
        v.push(RatingRecord::new("lonely", "i0", 5.0));
        v
    }

    fn config() -> TrainConfig {
        TrainConfig {
            min_user: 2,
            min_item: 2,
            num_folds: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn prepare_write_load_roundtrip() {
        let ds = PreparedDataset::prepare(&raw(), &config()).unwrap();
        assert_eq!(ds.num_users(), 8);
        assert!(ds.users.get("lonely").is_none());
        let dir = std::env::temp_dir().join(format!("signedcf-ds-{}", std::process::id()));
        let files = ds.write(&dir).unwrap();
        assert_eq!(files.len(), 2 + 1 + 2 + 1);
        let back = PreparedDataset::load(&dir, 2.5).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.folds, ds.folds);
        let a = ds.split(1).unwrap();
        let b = back.split(1).unwrap();
        assert_eq!(a.test_all, b.test_all);
        assert_eq!(a.train.edges(), b.train.edges());
    }

    #[test]
    fn zero_thresholds_keep_everything() {
        let cfg = TrainConfig {
            min_user: 0,
            min_item: 0,
            ..config()
        };
        let ds = PreparedDataset::prepare(&raw(), &cfg).unwrap();
        assert_eq!(ds.records.len(), raw().len());
    }

    #[test]
    fn stats_ratio() {
        let recs = [
            IndexedRating {
                user: 0,
                item: 0,
                rating: 5.0,
            },
            IndexedRating {
                user: 0,
                item: 1,
                rating: 4.0,
            },
            IndexedRating {
                user: 1,
                item: 0,
                rating: 1.0,
            },
            IndexedRating {
                user: 1,
                item: 1,
                rating: 2.5,
            },
        ];
        let s = DatasetStats::compute(&recs, 2, 2, 2.5);
        assert_eq!((s.positive, s.negative, s.unsigned), (2, 1, 1));
        assert_eq!(s.density(), 1.0);
        assert!(s.to_text().contains("pos_neg_ratio = 1:0.50"));
    }

    #[test]
    fn everything_filtered_is_empty_dataset() {
        let cfg = TrainConfig {
            min_user: 100,
            ..config()
        };
        assert!(matches!(
            PreparedDataset::prepare(&raw(), &cfg),
            Err(Error::EmptyDataset(_))
        ));
    }
}
