//! Loss, metrics, the variant registry, the training loop and checkpoints.

mod checkpoint;
mod config;
mod experiment;
mod loss;
pub mod metrics;
mod model;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{DropoutReading, Hyperparameters};
pub use experiment::{compare_variants, repeat_seeds, MeanMetrics};
pub use loss::masked_cross_entropy;
pub use metrics::{metrics, MetricsReport};
pub use model::{build_variant, tiny_gradient_check, Model, TinyGradCheck, VariantId, WindowPass};
pub use train::{
    evaluate, predict_dataset, train, train_from, training_windows, EpochRecord, TrainOutcome,
};
