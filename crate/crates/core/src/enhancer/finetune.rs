use super::{ContentFeatureExtractor, CurveEnhancer, EnhanceError};
use crate::image::ImageTensor;
use crate::nn::{Adam, AdamConfig};
use crate::ranker::Ranker;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub content: f64,
    /// Mean sigmoid of the ranker score over the batch.
    pub ranker: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(content: f64, ranker: f64, lambda_r: f64) -> Self {
        Self {
            content,
            ranker,
            total: content + lambda_r * ranker,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub lambda_r: f64,
    pub lr: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub levels: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lambda_r: 0.1,
            lr: 0.01,
            iters: 1000,
            batch_size: 2,
            levels: 3,
            seed: 0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Total fine-tuning loss and its gradient over the enhancer's raw parameters.
///
/// Each batch item is `(input x, previous-stage output)`. The content term is
/// the batch mean of the pyramid loss between the current output and the
/// previous one; the ranker term is the batch mean of `sigmoid(g(y))` with `g`
/// frozen in eval mode.
pub fn finetune_loss_and_grad(
    enhancer: &CurveEnhancer,
    ranker: &Ranker,
    batch: &[(&ImageTensor, &ImageTensor)],
    features: &ContentFeatureExtractor,
    lambda_r: f64,
) -> Result<(LossReport, Vec<f64>), EnhanceError> {
    if batch.is_empty() {
        return Err(EnhanceError::EmptyDataset);
    }
    let n = batch.len() as f64;
    let (mut content, mut rank) = (0.0, 0.0);
    let mut grad = vec![0.0; enhancer.raw().len()];
    for &(x, prev) in batch {
        let y = enhancer.enhance(x)?;
        let (lc, mut dy) = features.content_loss(&y, prev)?;
        content += lc / n;
        let (s, ds) = ranker.score_input_grad(&y)?;
        let sig = sigmoid(s);
        rank += sig / n;
        let chain = lambda_r * sig * (1.0 - sig);
        for (d, g) in dy.data_mut().iter_mut().zip(ds.data()) {
            *d = (*d + chain * g) / n;
        }
        for (a, g) in grad.iter_mut().zip(enhancer.enhance_grad(x, &dy)?) {
            *a += g;
        }
    }
    let report = LossReport::new(content, rank, lambda_r);
    if !report.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(EnhanceError::NonFinite);
    }
    Ok((report, grad))
}

/// One Adam step on the enhancer against the total loss.
pub fn finetune_step(
    enhancer: &mut CurveEnhancer,
    adam: &mut Adam,
    ranker: &Ranker,
    batch: &[(&ImageTensor, &ImageTensor)],
    features: &ContentFeatureExtractor,
    lambda_r: f64,
) -> Result<LossReport, EnhanceError> {
    let (report, grad) = finetune_loss_and_grad(enhancer, ranker, batch, features, lambda_r)?;
    adam.step(&mut [enhancer.raw_mut()], &[&grad])?;
    Ok(report)
}

/// Fine-tunes `start` against a frozen ranker. The previous-stage outputs are
/// those of `start` itself, computed once up front.
pub fn finetune(
    start: &CurveEnhancer,
    ranker: &Ranker,
    inputs: &[ImageTensor],
    config: &FinetuneConfig,
) -> Result<(CurveEnhancer, Vec<LossReport>), EnhanceError> {
    if inputs.is_empty() {
        return Err(EnhanceError::EmptyDataset);
    }
    let previous = inputs.iter().map(|x| start.enhance(x)).collect::<Result<Vec<_>, _>>()?;
    let features = ContentFeatureExtractor::new(config.levels);
    let mut enhancer = start.clone();
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..Default::default()
    });
    let mut rng = SeededRng::keyed(config.seed, "finetune");
    let mut history = Vec::with_capacity(config.iters);
    for _ in 0..config.iters {
        let batch: Vec<(&ImageTensor, &ImageTensor)> = (0..config.batch_size.max(1))
            .map(|_| {
                let i = rng.index(inputs.len());
                (&inputs[i], &previous[i])
            })
            .collect();
        history.push(finetune_step(&mut enhancer, &mut adam, ranker, &batch, &features, config.lambda_r)?);
    }
    Ok((enhancer, history))
}
