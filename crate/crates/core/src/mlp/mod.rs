//! Secure MLP training on vertically partitioned data.

pub mod checkpoint;
pub mod data;
pub mod model;
pub mod train;

pub use data::{
    ingest_vertical, split_indices, Dataset, ProviderBlock, SharedData, VerticalLayout,
};
pub use model::{
    backward_and_step, forward, gradients, GradientScale, MlpConfig, PlainModel, SharedModel,
};
pub use train::{
    predict, prepare_blocks, run_training, train_party, train_plain, weight_divergence,
    EpochMetrics, Partition, PlainTraining, TrainingReport, EVALUATOR,
};
