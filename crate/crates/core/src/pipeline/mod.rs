//! Optimizers, checkpoints, run configuration, training loops and the
//! experiment drivers built on them.

mod audit;
mod checkpoint;
mod config;
mod optim;
mod runs;
mod train;

pub use audit::{audit_model_config, end_to_end_gradient_check};
pub use checkpoint::{Checkpoint, CheckpointHeader, CheckpointKind, TensorRecord, FORMAT_VERSION, MAGIC};
pub use config::RunConfig;
pub use optim::{OptimizerKind, OptimizerSettings, OptimizerState};
pub use runs::{
    ablation_matrix, describe_checkpoint, evaluate, infer, lambda_sweep, prepare_guide, run_removal_in_memory,
    train_matte_generator, train_removal, AblationRow, RunResult, SweepRow, FINAL_CHECKPOINT, LOSS_LOG,
    MATTE_RUN_DIR, REMOVAL_RUN_DIR,
};
pub use train::{
    load_frozen_generator, load_samples, samples_for, synthetic_samples, MatteStepLog, MatteTrainer, RemovalMeta,
    RemovalTrainer, Sample,
};
