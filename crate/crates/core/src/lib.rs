//! Sign-aware graph collaborative filtering.
//!
//! Ratings are split by a threshold into liked and disliked edges of a
//! user-item bipartite graph. Dual positive/negative embeddings are obtained by
//! parameter-free propagation over that graph, trained with pairwise ranking,
//! rating regression and orthogonality objectives, and turned into top-K lists
//! from which each user's most disliked candidates are filtered out.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod optim;
pub mod propagation;
pub mod recommend;
pub mod scalar;
pub mod trainer;

pub use config::{Precision, TrainConfig};
pub use dataset::PreparedDataset;
pub use error::{Error, Result};
pub use eval::{aggregate_folds, evaluate, EvalReport, Metrics};
pub use graph::{build_graph, sign_edges, DatasetSplit, SignedBipartiteGraph};
pub use propagation::{full_forward, EmbeddingState, FinalEmbeddings, Propagator};
pub use recommend::{recommend, recommend_all, Filter, RecommendationList};
pub use scalar::Scalar;
pub use trainer::{fit, fit_fold, init_params, FoldFit, ModelParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`; streams never overlap.
pub fn seeded_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type EmbeddingState32 = EmbeddingState<f32>;
pub type EmbeddingState64 = EmbeddingState<f64>;
pub type FinalEmbeddings32 = FinalEmbeddings<f32>;
pub type FinalEmbeddings64 = FinalEmbeddings<f64>;
pub type Propagator32 = Propagator<f32>;
pub type Propagator64 = Propagator<f64>;
