//! The stage orchestrator: pair generation, top-k selection, label
//! accumulation, ranker training and enhancer fine-tuning over a work directory.
//!
//! ```text
//! workdir/config.json
//! workdir/stages/<n>/{enhancer.ckpt, ranker.ckpt, outputs/*.png, pairs.jsonl,
//!                     selected.jsonl, votes.jsonl, labels.jsonl, status.json, metrics.json}
//! ```
//!
//! Stage 0 also holds `pristine.ckpt`, the pretraining `intermediates/` and the
//! step reports `pretrain.json` and `bootstrap.json`.

mod data;
mod eval;
mod layout;
mod pairs;
mod runner;

use std::path::PathBuf;

pub use data::{Datasets, InputSet};
pub use eval::{annotators, fresh_accuracy, mean_ranker_sigmoid, mean_utility, preference_rate, render, simulated_pairs};
pub use layout::{
    read_jsonl, StageState, StageStatus, Workdir, WorkdirLock, BOOTSTRAP_FILE, CONFIG_FILE, ENHANCER_CKPT, LOCK_FILE,
    METRICS_FILE, OUTPUTS_DIR, PAIRS_FILE, PRETRAIN_FILE, RANKER_CKPT, SELECTED_FILE, STATUS_FILE,
};
pub use pairs::{generate_pairs, pair_id, select_pairs, PairRecord};
pub use runner::{BootstrapReport, Phase1Metrics, Pipeline, PretrainReport, RunSummary, StageMetrics};

use crate::annotation::AnnotationError;
use crate::bootstrap::BootstrapError;
use crate::checkpoint::CheckpointError;
use crate::config::ConfigError;
use crate::enhancer::EnhanceError;
use crate::image::ImageError;
use crate::ranker::RankerError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("work directory is locked by {0} (remove it if no run is active)")]
    Locked(PathBuf),
    #[error("{what} checkpoint is tagged stage {found}, expected {expected}")]
    StageMismatch { what: String, expected: u32, found: u32 },
    #[error("no pairs to select from")]
    NoPairs,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no input images in {0}")]
    EmptyInputs(String),
    #[error("{set} image {id} is not RGB or differs in size from the first image")]
    NonUniformInputs { set: String, id: String },
    #[error("config differs from the work directory's config.json in: {}", .0.join(", "))]
    ConfigMismatch(Vec<String>),
    #[error("stage {stage} cannot run: {reason}")]
    NotReady { stage: u32, reason: String },
    #[error("stage {stage} is past the last stage ({stages} configured)")]
    BeyondLastStage { stage: u32, stages: u32 },
    #[error("stage {stage}: {pending} selected pairs still need votes")]
    IncompleteVotes { stage: u32, pending: usize },
    #[error("no labels collected up to stage {stage}")]
    NoLabels { stage: u32 },
    #[error("label for unknown pair {0}")]
    UnknownPair(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
