//! Parameter initialization, the training loop, and best-checkpoint selection.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graph::{DatasetSplit, SignedBipartiteGraph, SignedEdge};
use crate::losses::{
    add_l2_grad, bpr_negative, bpr_positive, l2_penalty, mse_rating, orthogonality, sample_batch,
    sample_edges, BprBatch, LossValues, MlpParams,
};
use crate::optim::{adam_step, lr_schedule, Param};
use crate::propagation::{EmbeddingState, FinalEmbeddings, Propagator};
use crate::scalar::Scalar;
use crate::seeded_rng;

/// Random stream used to initialize fold `f` is `INIT_STREAM + f`.
pub const INIT_STREAM: u64 = 1 << 32;
/// Random stream used for sampling while training fold `f` is `TRAIN_STREAM + f`.
pub const TRAIN_STREAM: u64 = 2 << 32;

/// Cutoff used for model selection.
pub const SELECTION_K: usize = 10;

/// Every trainable tensor plus the shared Adam step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub e0_user: Param<T>,
    pub e0_item: Param<T>,
    pub w1: Param<T>,
    pub w2: Param<T>,
    pub step: u64,
}

impl<T: Scalar> ModelParams<T> {
    pub fn num_users(&self) -> usize {
        self.e0_user.value.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.e0_item.value.nrows()
    }

    pub fn dim(&self) -> usize {
        self.e0_user.value.ncols()
    }

    pub fn mlp(&self) -> MlpParams<T> {
        MlpParams {
            w1: self.w1.value.clone(),
            w2: self.w2.value.clone(),
        }
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 4] {
        [
            &mut self.e0_user,
            &mut self.e0_item,
            &mut self.w1,
            &mut self.w2,
        ]
    }

    pub fn values(&self) -> [&Array2<T>; 4] {
        [
            &self.e0_user.value,
            &self.e0_item.value,
            &self.w1.value,
            &self.w2.value,
        ]
    }

    pub fn forward(&self, prop: &Propagator<T>, layers: usize) -> Result<EmbeddingState<T>> {
        prop.forward(&self.e0_user.value, &self.e0_item.value, layers)
    }

    /// Assembles parameters from raw tensors with zeroed optimizer state.
    pub fn from_values(
        e0_user: Array2<T>,
        e0_item: Array2<T>,
        w1: Array2<T>,
        w2: Array2<T>,
    ) -> Result<Self> {
        let d = e0_user.ncols();
        if e0_item.ncols() != d || w1.dim() != (2 * d, 2 * d) || w2.dim() != (2 * d, 1) {
            return Err(Error::contract(
                "parameter shapes disagree on the embedding width",
            ));
        }
        Ok(ModelParams {
            e0_user: Param::new(e0_user),
            e0_item: Param::new(e0_item),
            w1: Param::new(w1),
            w2: Param::new(w2),
            step: 0,
        })
    }
}

/// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Array2<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.random_range(-a..=a)))
}

pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    dim: usize,
    num_users: usize,
    num_items: usize,
    rng: &mut R,
) -> Result<ModelParams<T>> {
    if num_users == 0 || num_items == 0 || dim == 0 {
        return Err(Error::contract(
            "need at least one user, one item and a positive width",
        ));
    }
    let e0_user = xavier_uniform(num_users, dim, rng);
    let e0_item = xavier_uniform(num_items, dim, rng);
    let w1 = xavier_uniform(2 * dim, 2 * dim, rng);
    let w2 = xavier_uniform(2 * dim, 1, rng);
    ModelParams::from_values(e0_user, e0_item, w1, w2)
}

/// Inputs of one optimization step.
#[derive(Debug, Clone, Default)]
pub struct StepBatch {
    pub bpr: BprBatch,
    /// Edges for the rating regressor; unused when that term is disabled.
    pub rating_edges: Vec<SignedEdge>,
}

impl StepBatch {
    pub fn sample<R: Rng + ?Sized>(
        graph: &SignedBipartiteGraph,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let bpr = sample_batch(graph, config.batch_size, config.negatives_per_obs, rng)?;
        let rating_edges = if config.enable_mse {
            sample_edges(graph, config.batch_size, rng)
        } else {
            Vec::new()
        };
        Ok(StepBatch { bpr, rating_edges })
    }
}

/// Loss values and gradients of the full objective at `params`; gradients are
/// added into the parameters' buffers.
pub fn accumulate_gradients<T: Scalar>(
    prop: &Propagator<T>,
    params: &mut ModelParams<T>,
    config: &TrainConfig,
    batch: &StepBatch,
) -> Result<LossValues> {
    let state = params.forward(prop, config.layers)?;
    let emb = &state.finals;
    let mut grad = FinalEmbeddings::zeros(params.num_users(), params.num_items(), params.dim());
    let [w_pos, w_neg, w_mse, w_ortho] = config.term_weights();
    let mut values = LossValues {
        bpr_pos: weighted(w_pos, &mut grad, |g| {
            bpr_positive(&batch.bpr, emb, T::lit(config.c1), g)
        }),
        ..Default::default()
    };
    if config.enable_bpr_neg {
        values.bpr_neg = weighted(w_neg, &mut grad, |g| {
            bpr_negative(&batch.bpr, emb, T::lit(config.c2), g)
        });
    }
    if config.enable_mse {
        let mut grad_mlp = MlpParams::zeros(params.dim());
        let mlp = params.mlp();
        values.mse = weighted(w_mse, &mut grad, |g| {
            mse_rating(&batch.rating_edges, emb, &mlp, g, &mut grad_mlp)
        });
        let w = T::lit(w_mse);
        params.w1.grad.scaled_add(w, &grad_mlp.w1);
        params.w2.grad.scaled_add(w, &grad_mlp.w2);
    }
    if config.enable_ortho {
        let (users, items) = batch.bpr.touched_nodes();
        values.ortho = weighted(w_ortho, &mut grad, |g| {
            orthogonality(&users, &items, emb, g)
        });
    }
    let (gu, gi) = prop.backward(&state, &grad)?;
    params.e0_user.grad += &gu;
    params.e0_item.grad += &gi;

    values.l2 = l2_penalty(&params.values()).as_f64();
    if config.lambda > 0.0 {
        let lambda = T::lit(config.lambda);
        for p in params.params_mut() {
            add_l2_grad(&p.value, lambda, &mut p.grad);
        }
    }
    Ok(values.with_total(config.term_weights(), config.lambda))
}

/// Runs one loss term, adding `weight` times its gradient into `grad`.
/// Returns the unweighted value.
fn weighted<T: Scalar>(
    weight: f64,
    grad: &mut FinalEmbeddings<T>,
    term: impl FnOnce(&mut FinalEmbeddings<T>) -> T,
) -> f64 {
    if weight == 1.0 {
        return term(grad).as_f64();
    }
    let mut own = FinalEmbeddings::zeros(grad.num_users(), grad.num_items(), grad.dim());
    let value = term(&mut own);
    let w = T::lit(weight);
    for (g, o) in grad.matrices_mut().into_iter().zip(own.matrices()) {
        g.scaled_add(w, o);
    }
    value.as_f64()
}

/// One forward/backward/Adam step on an explicit batch.
pub fn train_step<T: Scalar>(
    prop: &Propagator<T>,
    params: &mut ModelParams<T>,
    config: &TrainConfig,
    batch: &StepBatch,
    lr: f64,
) -> Result<LossValues> {
    let values = accumulate_gradients(prop, params, config, batch)?;
    if !values.total.is_finite() {
        for p in params.params_mut() {
            p.grad.fill(T::zero());
        }
        return Err(Error::NonFinite(format!(
            "total loss {} at step {}",
            values.total,
            params.step + 1
        )));
    }
    let ModelParams {
        e0_user,
        e0_item,
        w1,
        w2,
        step,
    } = params;
    adam_step(&mut [e0_user, e0_item, w1, w2], step, T::lit(lr))?;
    Ok(values)
}

/// `ceil(|E| / batch_size)` steps; returns the mean of each loss term.
pub fn train_epoch<T: Scalar, R: Rng + ?Sized>(
    graph: &SignedBipartiteGraph,
    prop: &Propagator<T>,
    params: &mut ModelParams<T>,
    config: &TrainConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<LossValues> {
    let steps = graph.num_edges().div_ceil(config.batch_size);
    let lr = lr_schedule(config, epoch);
    let mut sum = LossValues::default();
    for _ in 0..steps {
        let batch = StepBatch::sample(graph, config, rng)?;
        let v = train_step(prop, params, config, &batch, lr)?;
        sum.bpr_pos += v.bpr_pos;
        sum.bpr_neg += v.bpr_neg;
        sum.mse += v.mse;
        sum.ortho += v.ortho;
        sum.l2 += v.l2;
    }
    let n = steps.max(1) as f64;
    Ok(LossValues {
        bpr_pos: sum.bpr_pos / n,
        bpr_neg: sum.bpr_neg / n,
        mse: sum.mse / n,
        ortho: sum.ortho / n,
        l2: sum.l2 / n,
        total: 0.0,
    }
    .with_total(config.term_weights(), config.lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossValues,
    pub secs: f64,
}

impl EpochLog {
    /// `epoch lr loss_total loss_bpr+ loss_bpr- loss_mse loss_ortho secs`
    pub fn line(&self) -> String {
        let l = &self.losses;
        format!(
            "{} {} {:.8} {:.8} {:.8} {:.8} {:.8} {:.4}",
            self.epoch, self.lr, l.total, l.bpr_pos, l.bpr_neg, l.mse, l.ortho, self.secs
        )
    }
}

#[derive(Debug, Clone)]
pub struct FoldFit<T> {
    pub fold_index: usize,
    pub best: ModelParams<T>,
    /// Epoch after which `best` was captured; `None` if never evaluated.
    pub best_epoch: Option<usize>,
    pub best_recall: f64,
    pub log: Vec<EpochLog>,
    /// `(epoch, Recall@10)` at each evaluation.
    pub evaluations: Vec<(usize, f64)>,
}

impl<T> FoldFit<T> {
    pub fn secs_per_epoch(&self) -> Option<f64> {
        (!self.log.is_empty())
            .then(|| self.log.iter().map(|e| e.secs).sum::<f64>() / self.log.len() as f64)
    }
}

pub fn init_fold<T: Scalar>(split: &DatasetSplit, config: &TrainConfig) -> Result<ModelParams<T>> {
    let mut rng = seeded_rng(config.seed, INIT_STREAM + split.fold_index as u64);
    init_params(
        config.dim,
        split.train.num_users(),
        split.train.num_items(),
        &mut rng,
    )
}

/// Recall@10 of `params` on the split's held-out items.
pub fn selection_recall<T: Scalar>(
    prop: &Propagator<T>,
    params: &ModelParams<T>,
    split: &DatasetSplit,
    config: &TrainConfig,
) -> Result<f64> {
    let state = params.forward(prop, config.layers)?;
    let report = evaluate(&state.finals, split, &[SELECTION_K], config.filter())?;
    Ok(report.per_k[&SELECTION_K].recall)
}

/// Trains one fold, keeping the parameters with the best Recall@10.
pub fn fit_fold<T: Scalar>(split: &DatasetSplit, config: &TrainConfig) -> Result<FoldFit<T>> {
    config.validate()?;
    let graph = &split.train;
    let prop = Propagator::new(graph);
    let mut params = init_fold::<T>(split, config)?;
    let mut rng = seeded_rng(config.seed, TRAIN_STREAM + split.fold_index as u64);
    let mut fit = FoldFit {
        fold_index: split.fold_index,
        best: params.clone(),
        best_epoch: None,
        best_recall: f64::NEG_INFINITY,
        log: Vec::with_capacity(config.epochs),
        evaluations: Vec::new(),
    };
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let losses = train_epoch(graph, &prop, &mut params, config, epoch, &mut rng)?;
        let secs = start.elapsed().as_secs_f64();
        let entry = EpochLog {
            epoch,
            lr: lr_schedule(config, epoch),
            losses,
            secs,
        };
        log::info!("fold {} {}", split.fold_index, entry.line());
        fit.log.push(entry);

        let done = epoch + 1;
        if done % config.eval_every == 0 || done == config.epochs {
            match selection_recall(&prop, &params, split, config) {
                Ok(recall) => {
                    fit.evaluations.push((epoch, recall));
                    if recall > fit.best_recall {
                        fit.best_recall = recall;
                        fit.best_epoch = Some(epoch);
                        fit.best = params.clone();
                    }
                }
                Err(Error::EmptyDataset(msg)) => {
                    log::warn!(
                        "fold {}: {msg}; keeping latest parameters",
                        split.fold_index
                    );
                    fit.best = params.clone();
                    fit.best_epoch = Some(epoch);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(fit)
}

/// [`fit_fold`] over every split.
pub fn fit<T: Scalar>(splits: &[DatasetSplit], config: &TrainConfig) -> Result<Vec<FoldFit<T>>> {
    if splits.is_empty() {
        return Err(Error::contract("fit needs at least one split"));
    }
    splits.iter().map(|s| fit_fold(s, config)).collect()
}
