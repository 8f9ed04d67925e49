//! Training: the composite loss, dynamic batch planning, gradient
//! accumulation, and the epoch loop.

mod batch;
mod loss;
mod trainer;

pub use batch::{make_dynamic_batches, BatchPlan};
pub use loss::{make_stop_targets, tts_loss, LossReport, LossWeights};
pub use trainer::{
    train_run, TrainConfig, TrainItem, TrainOutcome, TrainerState, ValSummary,
};
