//! Precision, Recall and NDCG at K over held-out liked items.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DatasetSplit;
use crate::propagation::FinalEmbeddings;
use crate::recommend::{recommend_all, Filter};
use crate::scalar::Scalar;

/// Relevance rule stated in every report header.
pub const RELEVANCE_NOTE: &str = "relevant = held-out items rated above delta; held-out disliked items are neither relevant nor hits";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_k: BTreeMap<usize, Metrics>,
    pub users_evaluated: usize,
    pub secs_per_epoch: Option<f64>,
    /// `None` for an aggregate over folds.
    pub fold_index: Option<usize>,
    /// Per-fold values behind an aggregate, in fold order.
    pub folds: Vec<(usize, BTreeMap<usize, Metrics>)>,
}

/// `(hits / k, hits / |relevant|)` over the first `k` entries.
pub fn precision_recall_at_k(recs: &[usize], relevant: &HashSet<usize>, k: usize) -> (f64, f64) {
    if k == 0 || relevant.is_empty() {
        return (0.0, 0.0);
    }
    let hits = recs.iter().take(k).filter(|i| relevant.contains(i)).count() as f64;
    (hits / k as f64, hits / relevant.len() as f64)
}

/// Binary-relevance NDCG with `log2(rank + 1)` discounts.
pub fn ndcg_at_k(recs: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let dcg: f64 = recs
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len()))
        .map(|r| 1.0 / (r as f64 + 2.0).log2())
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Averages each cutoff over users with at least one relevant held-out item.
/// Lists are ranked once at the largest K unless the filter size follows K.
pub fn evaluate<T: Scalar>(
    emb: &FinalEmbeddings<T>,
    split: &DatasetSplit,
    ks: &[usize],
    filter: Filter,
) -> Result<EvalReport> {
    let max_k = ks
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::config("no cutoffs requested"))?;
    let shared = (filter != Filter::SameAsK)
        .then(|| recommend_all(&split.train, emb, max_k, filter.size(max_k)));
    let relevant: Vec<HashSet<usize>> = split
        .test_positive
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    let users = relevant.iter().filter(|r| !r.is_empty()).count();
    let mut sums: BTreeMap<usize, Metrics> = ks.iter().map(|&k| (k, Metrics::default())).collect();
    for (&k, m) in sums.iter_mut() {
        let own;
        let lists = match &shared {
            Some(l) => l,
            None => {
                own = recommend_all(&split.train, emb, k, filter.size(k));
                &own
            }
        };
        for list in lists {
            let rel = &relevant[list.user];
            if rel.is_empty() {
                continue;
            }
            let (p, r) = precision_recall_at_k(&list.items, rel, k);
            m.precision += p;
            m.recall += r;
            m.ndcg += ndcg_at_k(&list.items, rel, k);
        }
    }
    if users == 0 {
        return Err(Error::EmptyDataset(
            "no user has a relevant held-out item".into(),
        ));
    }
    let n = users as f64;
    for m in sums.values_mut() {
        m.precision /= n;
        m.recall /= n;
        m.ndcg /= n;
    }
    Ok(EvalReport {
        per_k: sums.clone(),
        users_evaluated: users,
        secs_per_epoch: None,
        fold_index: Some(split.fold_index),
        folds: vec![(split.fold_index, sums)],
    })
}

/// Unweighted mean over folds.
pub fn aggregate_folds(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::contract("no reports to aggregate"))?;
    let ks: Vec<usize> = first.per_k.keys().copied().collect();
    let n = reports.len() as f64;
    let mut per_k: BTreeMap<usize, Metrics> = ks.iter().map(|&k| (k, Metrics::default())).collect();
    let mut folds = Vec::new();
    for (idx, r) in reports.iter().enumerate() {
        if r.per_k.keys().copied().collect::<Vec<_>>() != ks {
            return Err(Error::contract("reports use different cutoffs"));
        }
        for (k, m) in &r.per_k {
            let acc = per_k.get_mut(k).expect("same keys");
            acc.precision += m.precision;
            acc.recall += m.recall;
            acc.ndcg += m.ndcg;
        }
        folds.push((r.fold_index.unwrap_or(idx), r.per_k.clone()));
    }
    for m in per_k.values_mut() {
        m.precision /= n;
        m.recall /= n;
        m.ndcg /= n;
    }
    let secs: Vec<f64> = reports.iter().filter_map(|r| r.secs_per_epoch).collect();
    Ok(EvalReport {
        per_k,
        users_evaluated: reports.iter().map(|r| r.users_evaluated).sum::<usize>() / reports.len(),
        secs_per_epoch: (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64),
        fold_index: None,
        folds,
    })
}

/// `metric,K,fold,value` rows for every fold plus `mean` rows.
pub fn write_csv<W: Write>(report: &EvalReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# {RELEVANCE_NOTE}")?;
    writeln!(out, "metric,K,fold,value")?;
    let mut emit = |fold: &str, per_k: &BTreeMap<usize, Metrics>| -> std::io::Result<()> {
        for (k, m) in per_k {
            writeln!(out, "precision,{k},{fold},{:.6}", m.precision)?;
            writeln!(out, "recall,{k},{fold},{:.6}", m.recall)?;
            writeln!(out, "ndcg,{k},{fold},{:.6}", m.ndcg)?;
        }
        Ok(())
    };
    for (f, per_k) in &report.folds {
        emit(&f.to_string(), per_k)?;
    }
    emit("mean", &report.per_k)
}

/// Aligned text table: one row per metric and cutoff, one column per method,
/// values in percent.
pub fn format_table(methods: &[(String, EvalReport)]) -> String {
    let mut ks: Vec<usize> = methods
        .iter()
        .flat_map(|(_, r)| r.per_k.keys().copied())
        .collect();
    ks.sort_unstable();
    ks.dedup();
    let width = methods
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max(10);
    let mut s = format!("# {RELEVANCE_NOTE}\n# values x100%\n{:<14}", "metric");
    for (name, _) in methods {
        s.push_str(&format!(" {name:>width$}"));
    }
    s.push('\n');
    let names = ["Precision", "Recall", "NDCG"];
    for k in &ks {
        for (mi, metric) in names.iter().enumerate() {
            s.push_str(&format!("{:<14}", format!("{metric}@{k}")));
            for (_, r) in methods {
                let cell = r
                    .per_k
                    .get(k)
                    .map(|m| format!("{:.3}", 100.0 * [m.precision, m.recall, m.ndcg][mi]))
                    .unwrap_or_else(|| "-".into());
                s.push_str(&format!(" {cell:>width$}"));
            }
            s.push('\n');
        }
    }
    if methods.iter().any(|(_, r)| r.secs_per_epoch.is_some()) {
        s.push_str(&format!("{:<14}", "Secs/Epoch"));
        for (_, r) in methods {
            let cell = r
                .secs_per_epoch
                .map(|x| format!("{x:.3}"))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(" {cell:>width$}"));
        }
        s.push('\n');
    }
    s
}
