//! Training configuration, optimizer, loop, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod engine;

pub use adam::Adam;
pub use checkpoint::CheckpointManifest;
pub use config::{lambda3_at, DiscriminatorArch, GeneratorArch, TrainConfig};
pub use engine::{
    build_extractor, checkpoint_path, derive_seed, fit, read_loss_csv, resume, steps_per_epoch, translate, Batch,
    FitOptions, FitOutcome, StepRecord, TrainState, LOSS_CSV_HEADER,
};
