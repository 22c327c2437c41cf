use std::sync::Arc;

use rayon::prelude::*;

use super::data::InputSet;
use super::PipelineError;
use crate::annotation::{aggregate_votes, SimulatedAnnotator};
use crate::config::RunConfig;
use crate::enhancer::CurveEnhancer;
use crate::image::ImageTensor;
use crate::ranker::{prediction_accuracy, LabeledPair, Ranker};

/// The simulated annotator panel of a run: ids `sim-0`, `sim-1`, ...
pub fn annotators(config: &RunConfig) -> Vec<SimulatedAnnotator> {
    (0..config.annotators)
        .map(|i| SimulatedAnnotator::new(format!("sim-{i}"), config.annotator_noise, config.seed))
        .collect()
}

/// 8-bit outputs of `enhancer` over `images`.
pub fn render(enhancer: &CurveEnhancer, images: &[ImageTensor]) -> Result<Vec<ImageTensor>, PipelineError> {
    images
        .par_iter()
        .map(|x| Ok(enhancer.enhance(x)?.quantized()))
        .collect()
}

/// Mean noise-free annotator utility of the given images.
pub fn mean_utility(annotator: &SimulatedAnnotator, images: &[ImageTensor]) -> f64 {
    images.iter().map(|y| annotator.utility(y)).sum::<f64>() / images.len().max(1) as f64
}

/// Mean `sigmoid(g(y))` over the images, the ranker term of the fine-tuning loss.
pub fn mean_ranker_sigmoid(ranker: &Ranker, images: &[ImageTensor]) -> Result<f64, PipelineError> {
    let refs: Vec<&ImageTensor> = images.iter().collect();
    let s = ranker.score_batch(&refs)?;
    Ok(s.iter().map(|z| 1.0 / (1.0 + (-z).exp())).sum::<f64>() / s.len().max(1) as f64)
}

/// Fraction of inputs where `ranker` scores `new` strictly better (lower) than `old`.
pub fn preference_rate(ranker: &Ranker, old: &[ImageTensor], new: &[ImageTensor]) -> Result<f64, PipelineError> {
    let o: Vec<&ImageTensor> = old.iter().collect();
    let n: Vec<&ImageTensor> = new.iter().collect();
    let (so, sn) = (ranker.score_batch(&o)?, ranker.score_batch(&n)?);
    Ok(so.iter().zip(&sn).filter(|(a, b)| b < a).count() as f64 / so.len().max(1) as f64)
}

/// Majority labels of the simulated panel for `(prev, cur)` version pairs of
/// held-out inputs. Pair ids are `val-s{stage}-{input_id}`, so the draws never
/// coincide with those of the annotated training pairs.
pub fn simulated_pairs(
    panel: &[SimulatedAnnotator],
    stage: u32,
    inputs: &InputSet,
    prev: &[ImageTensor],
    cur: &[ImageTensor],
) -> Result<Vec<LabeledPair>, PipelineError> {
    let mut out = Vec::with_capacity(inputs.len());
    for ((id, p), c) in inputs.ids.iter().zip(prev).zip(cur) {
        let pair_id = format!("val-s{stage}-{id}");
        let votes: Vec<_> = panel.iter().map(|a| a.vote(&pair_id, p, c, 0)).collect();
        let label = aggregate_votes(&votes)?;
        out.push(LabeledPair::new(Arc::new(p.clone()), Arc::new(c.clone()), label.label_prev, label.label_cur)?);
    }
    Ok(out)
}

/// Accuracy of `ranker` against the simulated panel on held-out version pairs.
pub fn fresh_accuracy(
    ranker: &Ranker,
    panel: &[SimulatedAnnotator],
    stage: u32,
    inputs: &InputSet,
    prev: &[ImageTensor],
    cur: &[ImageTensor],
) -> Result<f64, PipelineError> {
    let pairs = simulated_pairs(panel, stage, inputs, prev, cur)?;
    Ok(prediction_accuracy(ranker, &pairs)?)
}
