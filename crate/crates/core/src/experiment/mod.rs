//! Datasets, protocols, training and the ablation grid.

pub mod ablation;
pub mod batch;
mod features;
pub mod manifest;
pub mod run;
pub mod split;
pub mod synth;
pub mod train;

pub use ablation::{run_ablation, AblationCell, AblationReport};
pub use batch::{chunk, make_batch, training_pool, Batch, BatchSeeds, PoolItem};
pub use features::extract_features;
pub use manifest::{load_manifest, parse_manifest, write_manifest, ExperimentDef, ExperimentName, SegmentRecord};
pub use run::{cross_validate, write_cv_artifacts, CvOutcome, FoldOutcome, Progress, Protocol};
pub use split::{kfold_splits, loso_splits, Fold};
pub use synth::{generate_synthetic_dataset, ClassParams, Envelope, SyntheticSpec};
pub use train::{
    evaluate, pretrain_speaker, train_emotion, train_model, Dataset, EpochStats, Evaluation, Prediction, TrainConfig,
};
