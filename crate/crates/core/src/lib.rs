//! Human-in-the-loop training of a low-light image enhancer.
//!
//! A quality ranker learns pairwise preferences over enhancer outputs from
//! adjacent training stages, and the enhancer is fine-tuned against the
//! ranker's differentiable score. The crate is organized bottom-up:
//!
//! * [`image`], [`checkpoint`], [`rng`]: shared value types and file formats.
//! * [`nn`]: layer primitives with explicit backward passes and Adam.
//! * [`enhancer`]: the parametric curve enhancer, pretraining and fine-tuning.
//! * [`ranker`]: the siamese quality ranker and margin-ranking training.
//! * [`bootstrap`]: the NIQE-style metric that labels the first ranking set.
//! * [`annotation`]: votes, majority aggregation, the label store and a
//!   simulated annotator.
//! * [`pipeline`]: the stage orchestrator and work-directory layout.
//! * [`study`]: paired-comparison (Thurstone) aggregation for user studies.

pub mod annotation;
pub mod bootstrap;
pub mod checkpoint;
pub mod config;
pub mod enhancer;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod ranker;
pub mod rng;
pub mod study;
pub mod synth;

pub use checkpoint::{ModelKind, ParamCheckpoint, ParamEntry};
pub use image::ImageTensor;
pub use rng::SeededRng;
