//! The curve enhancer `f`, its pyramid content loss, pretraining and fine-tuning.

mod curve;
mod features;
mod finetune;
mod pretrain;

pub use curve::{CurveEnhancer, DEFAULT_ITERATIONS};
pub use features::ContentFeatureExtractor;
pub use finetune::{finetune, finetune_loss_and_grad, finetune_step, FinetuneConfig, LossReport};
pub use pretrain::{pretrain, pretrain_loss, PretrainConfig, PretrainOutput};

use crate::checkpoint::{CheckpointError, ParamCheckpoint};
use crate::image::ImageError;
use crate::nn::NnError;
use crate::ranker::RankerError;

#[derive(Debug, thiserror::Error)]
pub enum EnhanceError {
    #[error("enhancer expects 3-channel images, got {0}")]
    Channels(usize),
    #[error(transparent)]
    Range(ImageError),
    #[error("upstream gradient shape differs from the input image")]
    GradShape,
    #[error("non-finite upstream gradient")]
    NonFinite,
    #[error("image shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("enhancer checkpoint has unexpected raw shape {0:?}")]
    BadCheckpointShape(Vec<usize>),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at iteration {iteration}")]
    Diverged {
        iteration: usize,
        /// Parameters from the last iteration whose loss was finite.
        last_finite: Box<ParamCheckpoint>,
    },
    #[error(transparent)]
    Optimizer(#[from] NnError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
}

fn dims(img: &crate::image::ImageTensor) -> [usize; 3] {
    [img.height(), img.width(), img.channels()]
}
