//! Baseline training loop, checkpoints and the gradient audit.

mod audit;
mod baseline;
mod checkpoint;

pub use audit::{
    audit_shipped, distill_fixture, grad_audit, shipped_fixtures, total_fixture, zero_image_fixture, AuditKind,
    AuditOptions, AuditReport, DistillFixture, Fixture, TotalFixture,
};
pub use baseline::{resize_and_crop, train_baseline, train_baseline_on, BaselineOutcome, BaselineStep, TrainConfig};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_full, load_extractor, save_checkpoint, save_checkpoint_with, save_extractor,
    Checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_VERSION, EXTRACTOR_FORMAT, NETWORK_FORMAT,
};
