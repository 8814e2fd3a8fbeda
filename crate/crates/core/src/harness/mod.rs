//! Training, checkpointing, ablations and inference.

pub mod checkpoint;
pub mod config;
pub mod log;
pub mod optim;
pub mod synth;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{Ablation, OptimConfig, TrainConfig, Variant};
pub use log::{parse_log, LogRecord};
pub use optim::Adam;
pub use train::{
    ablate, epoch_checkpoint_name, epoch_seed, evaluate_pairs, make_batches, resume, super_resolve, train, Batch,
    PatchEval, RunOptions, RunOutcome, SrModel, Trainer, LAST_CHECKPOINT, LOG_FILE,
};
