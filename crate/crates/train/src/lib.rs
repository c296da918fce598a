//! Training harness for the dmlbench losses: feature datasets, a small
//! encoder, Adam/RMSProp, the sampler-to-loss training loop, checkpoints and
//! a DREML-style ensemble.

pub mod data;
pub mod encoder;
pub mod error;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use data::{gen_synthetic, load_feature_csv, split_disjoint_classes, Dataset, SplitSpec, SyntheticSpec};
pub use dmlbench_core::eval::{binarize, BinaryCodes};
pub use encoder::{EncoderKind, EncoderSpec};
pub use error::{Result, TrainError};
pub use loss::{LossConfig, LossKind, SamplerConfig, SamplerKind};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use trainer::{
    compute_gradients, draw_batch, dreml_train, embed, evaluate_members, gradients_for_plan, init_run, init_state,
    train_run, train_step, train_until, BatchGradients, HistoryEntry, RunState, Schedule, TrainConfig, TrainState,
    CHECKPOINT_VERSION,
};
