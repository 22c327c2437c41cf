//! NIQE-lite: a single-scale natural-scene-statistics metric used to label
//! the first ranking dataset before any human votes exist.

mod dataset;
mod niqe;

pub use dataset::{build_bootstrap_dataset, BootstrapPair, BootstrapSet};
pub use niqe::{
    feature_distance, fit_aggd, fit_ggd, fit_pristine, mscn, mscn_with_sigma, niqe_distance, niqe_score, patch_features,
    AggdFit, GgdFit, NiqeLabel, Plane, PristineModel, DEFAULT_PATCH, FEATURES, MIN_SAMPLES, MIN_SCORED_SIDE,
};

use crate::checkpoint::CheckpointError;
use crate::enhancer::EnhanceError;

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error("image {height}x{width} is smaller than {min} pixels per side")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("need at least 32 samples, got {0}")]
    TooFewSamples(usize),
    #[error("samples have zero variance")]
    Degenerate,
    #[error("pristine corpus needs at least 10 images, got {0}")]
    CorpusTooSmall(usize),
    #[error("every patch was rejected")]
    AllPatchesRejected,
    #[error("combined feature covariance is singular")]
    Singular,
    #[error("pristine model tensors have the wrong size")]
    BadModel,
    #[error("need at least 2 enhancer checkpoints, got {0}")]
    TooFewCheckpoints(usize),
    #[error("no version pair has distinct labels")]
    NoPairs,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
}
