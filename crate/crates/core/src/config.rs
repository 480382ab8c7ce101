//! Experiment configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Delimiter;
use crate::recommend::Filter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "f32" => Ok(Precision::Single),
            "double" | "f64" => Ok(Precision::Double),
            other => Err(Error::config(format!("unknown precision `{other}`"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

/// Every hyperparameter, ablation switch and data-preparation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    pub negatives_per_obs: usize,
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub seed: u64,
    pub enable_bpr_neg: bool,
    pub enable_mse: bool,
    pub enable_ortho: bool,
    pub enable_filter: bool,
    /// Multipliers on the four objectives in the total loss.
    pub w_bpr_pos: f64,
    pub w_bpr_neg: f64,
    pub w_mse: f64,
    pub w_ortho: f64,
    /// Size of the disliked set removed by the filter; 0 means "same as K".
    pub filter_k: usize,
    pub precision: Precision,
    pub eval_every: usize,
    pub eval_ks: Vec<usize>,
    pub min_user: usize,
    pub min_item: usize,
    pub split_ratio: f64,
    pub num_folds: usize,
    pub delimiter: Delimiter,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 64,
            layers: 2,
            lr: 0.005,
            batch_size: 1024,
            epochs: 200,
            lambda: 1e-4,
            c1: 1.5,
            c2: 1.5,
            delta: 2.5,
            negatives_per_obs: 1,
            lr_milestones: vec![100, 150],
            lr_gamma: 0.5,
            seed: 42,
            enable_bpr_neg: true,
            enable_mse: true,
            enable_ortho: true,
            enable_filter: true,
            w_bpr_pos: 1.0,
            w_bpr_neg: 1.0,
            w_mse: 1.0,
            w_ortho: 1.0,
            filter_k: 0,
            precision: Precision::Double,
            eval_every: 10,
            eval_ks: vec![10, 20],
            min_user: 5,
            min_item: 5,
            split_ratio: 0.8,
            num_folds: 5,
            delimiter: Delimiter::Tab,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Assigns one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dim" => self.dim = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "c1" => self.c1 = parse(key, v)?,
            "c2" => self.c2 = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "negatives_per_obs" => self.negatives_per_obs = parse(key, v)?,
            "lr_milestones" => self.lr_milestones = parse_list(key, v)?,
            "lr_gamma" => self.lr_gamma = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "enable_bpr_neg" => self.enable_bpr_neg = parse(key, v)?,
            "enable_mse" => self.enable_mse = parse(key, v)?,
            "enable_ortho" => self.enable_ortho = parse(key, v)?,
            "enable_filter" => self.enable_filter = parse(key, v)?,
            "w_bpr_pos" => self.w_bpr_pos = parse(key, v)?,
            "w_bpr_neg" => self.w_bpr_neg = parse(key, v)?,
            "w_mse" => self.w_mse = parse(key, v)?,
            "w_ortho" => self.w_ortho = parse(key, v)?,
            "filter_k" => self.filter_k = parse(key, v)?,
            "precision" => self.precision = v.parse()?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_ks" => self.eval_ks = parse_list(key, v)?,
            "min_user" => self.min_user = parse(key, v)?,
            "min_item" => self.min_item = parse(key, v)?,
            "split_ratio" => self.split_ratio = parse(key, v)?,
            "num_folds" => self.num_folds = parse(key, v)?,
            "delimiter" => self.delimiter = v.parse()?,
            other => return Err(Error::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dim", self.dim.to_string());
        kv("layers", self.layers.to_string());
        kv("lr", self.lr.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lambda", self.lambda.to_string());
        kv("c1", self.c1.to_string());
        kv("c2", self.c2.to_string());
        kv("delta", self.delta.to_string());
        kv("negatives_per_obs", self.negatives_per_obs.to_string());
        kv("lr_milestones", join(&self.lr_milestones));
        kv("lr_gamma", self.lr_gamma.to_string());
        kv("seed", self.seed.to_string());
        kv("enable_bpr_neg", self.enable_bpr_neg.to_string());
        kv("enable_mse", self.enable_mse.to_string());
        kv("enable_ortho", self.enable_ortho.to_string());
        kv("enable_filter", self.enable_filter.to_string());
        kv("w_bpr_pos", self.w_bpr_pos.to_string());
        kv("w_bpr_neg", self.w_bpr_neg.to_string());
        kv("w_mse", self.w_mse.to_string());
        kv("w_ortho", self.w_ortho.to_string());
        kv("filter_k", self.filter_k.to_string());
        kv("precision", self.precision.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_ks", join(&self.eval_ks));
        kv("min_user", self.min_user.to_string());
        kv("min_item", self.min_item.to_string());
        kv("split_ratio", self.split_ratio.to_string());
        kv("num_folds", self.num_folds.to_string());
        kv("delimiter", self.delimiter.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m.to_owned()));
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.layers == 0 || self.layers > crate::propagation::MAX_LAYERS {
            return fail("layers must be in 1..=8");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr must be finite and non-negative");
        }
        if self.batch_size == 0 || self.negatives_per_obs == 0 {
            return fail("batch_size and negatives_per_obs must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be finite and non-negative");
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return fail("c1 and c2 must be positive");
        }
        let weights = [self.w_bpr_pos, self.w_bpr_neg, self.w_mse, self.w_ortho];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("term weights must be finite and non-negative");
        }
        if !self.delta.is_finite() {
            return fail("delta must be finite");
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma.is_finite()) {
            return fail("lr_gamma must be positive");
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail("lr_milestones must be strictly increasing");
        }
        if self.epochs > 0 && self.lr_milestones.iter().any(|&m| m >= self.epochs) {
            return fail("lr_milestones must be below epochs");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return fail("eval_ks must list positive cutoffs");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return fail("split_ratio must lie in (0, 1)");
        }
        if self.num_folds == 0 {
            return fail("num_folds must be positive");
        }
        Ok(())
    }

    /// `[bpr+, bpr-, mse, ortho]`
    pub fn term_weights(&self) -> [f64; 4] {
        [self.w_bpr_pos, self.w_bpr_neg, self.w_mse, self.w_ortho]
    }

    pub fn filter(&self) -> Filter {
        match (self.enable_filter, self.filter_k) {
            (false, _) => Filter::Off,
            (true, 0) => Filter::SameAsK,
            (true, f) => Filter::Top(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_text_roundtrips() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn overrides_and_comments() {
        let c = TrainConfig::from_text("# toy\ndim = 16\nlr_milestones = 5, 8\nenable_filter=false # ablation\nepochs = 10\nprecision = single\n").unwrap();
        assert_eq!(c.dim, 16);
        assert_eq!(c.lr_milestones, vec![5, 8]);
        assert!(!c.enable_filter);
        assert_eq!(c.precision, Precision::Single);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_text("dim = x").is_err());
        assert!(TrainConfig::from_text("bogus = 1").is_err());
        assert!(TrainConfig::from_text("lr_milestones = 5,5").is_err());
        assert!(TrainConfig::from_text("epochs = 10\nlr_milestones = 20").is_err());
        assert!(TrainConfig::from_text("layers = 0").is_err());
    }
}
