//! The siamese quality ranker `g`, its margin-ranking training and accuracy metric.

mod loss;
mod model;
mod train;

pub use loss::{margin_ranking_loss, MarginLoss};
pub use model::{Ranker, RankerArch};
pub use train::{accuracy_from_scores, prediction_accuracy, train_ranker, LabeledPair, RankerTrainConfig, TrainReport};

use crate::checkpoint::CheckpointError;
use crate::image::ImageError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum RankerError {
    #[error("ranker expects 3-channel images, got {0}")]
    Channels(usize),
    #[error("image {height}x{width} is smaller than the minimum side {min}")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error(transparent)]
    Range(ImageError),
    #[error("images in one batch must share a size")]
    MixedSizes,
    #[error("ranker produced a non-finite score")]
    NonFinite,
    #[error("labeled pair has equal labels")]
    TiedLabels,
    #[error("no labeled pairs")]
    EmptyDataset,
    #[error("invalid ranker architecture entry {0:?}")]
    BadArch(Vec<f64>),
    #[error("parameter {name}: expected {expected} values, found {actual}")]
    ParamSize { name: String, expected: usize, actual: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
