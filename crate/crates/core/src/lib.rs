//! Training and evaluation engine for implicit-feedback top-K recommendation.
//!
//! The engine trains embedding models (matrix factorization or light
//! graph-convolution propagation) under six ranking objectives — `mse`,
//! `bce`, `bpr`, `cml`, `uib` and `spr`, the quadruple loss driven by a
//! precomputed user-similarity index — and evaluates them with the
//! full-ranking Recall@K / NDCG@K protocol. All randomness is seeded and
//! every pipeline is reproducible bit-for-bit.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod io;
pub mod losses;
pub mod models;
pub mod sampler;
pub mod similarity;
pub mod trainer;

pub use dataset::{DatasetStats, InteractionDataset, SynthConfig};
pub use eval::MetricsReport;
pub use losses::{LossKind, LossOutput};
pub use models::{Backbone, ModelState, ScoreHead};
pub use sampler::TrainingBatch;
pub use similarity::{Side, SimilarityIndex, SimilarityNorm};
pub use trainer::{EpochReport, StopReason, TrainConfig, TrainOutcome};
