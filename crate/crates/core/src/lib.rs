//! Deep metric learning building blocks: embedding losses with exact
//! gradients, in-batch samplers, and retrieval / clustering evaluation.
//!
//! Everything is generic over the scalar type; the aliases below fix it to
//! `f64`, with `*32` variants for `f32`.

pub mod batch;
pub mod diff;
pub mod distance;
pub mod error;
pub mod eval;
pub mod losses;
pub mod plan;
pub mod sampling;
pub mod scalar;

pub use batch::{l2_normalize, normalize_rows, EmbeddingBatch};
pub use diff::{grad_check, DifferentiableResult, GradCheckReport, Params};
pub use distance::{pairwise_distances, DistanceMatrix, Metric};
pub use error::{DmlError, Result};
pub use plan::{BatchPlan, Episode, EpisodeClass, PairIndexSet, PlanKind, Triplet, TripletIndexSet};
pub use sampling::{ClassIndex, EpisodeSpec, SamplerRng};
pub use scalar::Scalar;

pub type Batch = EmbeddingBatch<f64>;
pub type Batch32 = EmbeddingBatch<f32>;
pub type Distances = DistanceMatrix<f64>;
pub type Distances32 = DistanceMatrix<f32>;
pub type LossResult = DifferentiableResult<f64>;
pub type LossResult32 = DifferentiableResult<f32>;
pub type Proxies = losses::ProxyBank<f64>;
pub type Proxies32 = losses::ProxyBank<f32>;
