//! Joint text-image embedding machinery at desk scale.
//!
//! The crate covers the full matching pipeline:
//!
//! - [`embed`]: embedding storage, L2 normalization, cosine similarity and
//!   the k-nearest-neighbor selector shared by losses and inference.
//! - [`losses`]: sum-, max- and kNN-margin triplet ranking losses with
//!   analytic gradients back to the un-normalized embedding rows.
//! - [`inference`]: naive nearest neighbor, Inverted Softmax, CSLS and
//!   Hungarian maximum-weight matching.
//! - [`metrics`]: R@K / Med r / Mean r and hub diagnostics.
//! - [`train`] and [`synth`]: linear toy encoders trained with Adam on
//!   seeded synthetic paired data.
//!
//! Row-wise work is parallelized with rayon when the `parallel` feature is
//! enabled (the default). Every parallel loop keeps a fixed per-row
//! reduction order, so results are bit-identical to the sequential build.

pub mod adam;
pub mod embed;
pub mod error;
pub mod inference;
pub mod losses;
pub mod matrix;
pub mod metrics;
mod par;
pub mod synth;
pub mod train;

pub use embed::{cosine_similarity, knn_select, normalize, EmbeddingSet, PairIndex, Provenance, SimilarityMatrix};
pub use error::{Error, Result};
pub use inference::{
    match_hungarian, rank, rank_csls, rank_inverted_softmax, rank_naive, InferenceConfig, Matching, RankingResult,
    Strategy,
};
pub use losses::{knn_margin_loss, max_margin_loss, sum_margin_loss, triplet_loss, LossConfig, LossKind, LossReport};
pub use matrix::Matrix;
pub use metrics::{compute_report, hub_histogram, hub_summary, Direction, HubHistogram, HubSummary, RetrievalReport};
pub use synth::{generate_synthetic, SyntheticData, SyntheticSpec};
pub use train::{
    lr_at_epoch, model_select, train, EpochRecord, ToyEncoder, TrainConfig, TrainData, TrainOutcome, Trainer,
};
