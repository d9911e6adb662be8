//! Training recipe: AdamW, plateau learning-rate halving, fixed epoch
//! budgets averaged over seeds, classification metrics, and a synthetic
//! class-conditional feature task.

mod data;
mod metrics;
mod optim;
mod schedule;
mod synth;
mod train;

pub use data::{load_feature_manifest, load_wav_tree, stratified_split, wav_files, Dataset, Example, Splits, SPLIT_FRACTIONS};
pub use metrics::{metrics, ConfusionMatrix, Metrics};
pub use optim::AdamW;
pub use schedule::{plateau_schedule, Plateau};
pub use synth::{synth_dataset, ClassTemplate, SyntheticTask, CALIBRATED_PER_CLASS, DEFAULT_CLASSES, DEFAULT_FRAMES, DEFAULT_NOISE, MIN_PER_CLASS};
pub use train::{
    argmax, evaluate, train, train_seed, EpochRecord, RunStatus, SeedRow, SeedRun, TrainConfig, TrainOutcome,
    TrainSummary,
};
