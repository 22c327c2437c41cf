use std::sync::Arc;

use super::{margin_ranking_loss, Ranker, RankerError};
use crate::image::ImageTensor;
use crate::nn::{Adam, AdamConfig, Mode, Tensor4};
use crate::rng::SeededRng;

/// Two same-content images with distinct rank labels (0 = better).
#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub first: Arc<ImageTensor>,
    pub second: Arc<ImageTensor>,
    pub label_first: u8,
    pub label_second: u8,
}

impl LabeledPair {
    pub fn new(first: Arc<ImageTensor>, second: Arc<ImageTensor>, label_first: u8, label_second: u8) -> Result<Self, RankerError> {
        if label_first == label_second {
            return Err(RankerError::TiedLabels);
        }
        Ok(Self {
            first,
            second,
            label_first,
            label_second,
        })
    }

    /// The pair with the better image first.
    pub fn ordered(better: Arc<ImageTensor>, worse: Arc<ImageTensor>) -> Self {
        Self {
            first: better,
            second: worse,
            label_first: 0,
            label_second: 1,
        }
    }

    pub fn better(&self) -> &Arc<ImageTensor> {
        if self.label_first < self.label_second {
            &self.first
        } else {
            &self.second
        }
    }

    pub fn worse(&self) -> &Arc<ImageTensor> {
        if self.label_first < self.label_second {
            &self.second
        } else {
            &self.first
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
            label_first: self.label_second,
            label_second: self.label_first,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerTrainConfig {
    pub iters: usize,
    /// Pairs per step.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub margin: f64,
    /// Halve the learning rate every this many steps; 0 keeps it fixed.
    pub halve_every: usize,
    pub seed: u64,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-4,
            margin: 0.5,
            halve_every: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss before each step.
    pub losses: Vec<f64>,
    /// Steps whose batch loss was exactly zero; these leave the model untouched.
    pub skipped: usize,
}

/// Trains `ranker` in place on margin-ranking loss over uniformly sampled pair batches.
///
/// Each step runs one train-mode forward over all `2 * batch` images, better
/// images first, so batch-norm statistics see both sides of every pair.
pub fn train_ranker(ranker: &mut Ranker, pairs: &[LabeledPair], config: &RankerTrainConfig) -> Result<TrainReport, RankerError> {
    if pairs.is_empty() {
        return Err(RankerError::EmptyDataset);
    }
    let batch = config.batch_size.max(1);
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..Default::default()
    });
    let mut rng = SeededRng::keyed(config.seed, "ranker-train");
    let mut report = TrainReport::default();

    for it in 0..config.iters {
        let picks: Vec<&LabeledPair> = (0..batch).map(|_| &pairs[rng.index(pairs.len())]).collect();
        let images: Vec<&ImageTensor> = picks
            .iter()
            .map(|p| p.better().as_ref())
            .chain(picks.iter().map(|p| p.worse().as_ref()))
            .collect();
        let x = ranker.batch(&images)?;
        let (y, trace) = ranker.network().forward(&x, Mode::Train)?;
        let s = y.data();
        if !y.is_finite() {
            return Err(RankerError::NonFinite);
        }
        let mut loss = 0.0;
        let mut dy = vec![0.0; 2 * batch];
        for i in 0..batch {
            let l = margin_ranking_loss(s[i], s[batch + i], 0, 1, config.margin);
            loss += l.value / batch as f64;
            dy[i] = l.d_pn / batch as f64;
            dy[batch + i] = l.d_pm / batch as f64;
        }
        report.losses.push(loss);
        if loss == 0.0 {
            report.skipped += 1;
            continue;
        }
        let (grads, _) = ranker.network().backward(&trace, &Tensor4::new([2 * batch, 1, 1, 1], dy))?;
        if config.halve_every > 0 {
            adam.set_lr(config.lr * 0.5f64.powi((it / config.halve_every) as i32));
        }
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let net = ranker.network_mut();
        adam.step(&mut net.params_mut(), &grad_refs)?;
        net.absorb(&trace);
    }
    Ok(report)
}

/// Fraction of pairs whose better image receives the strictly lower score.
pub fn prediction_accuracy(ranker: &Ranker, pairs: &[LabeledPair]) -> Result<f64, RankerError> {
    if pairs.is_empty() {
        return Err(RankerError::EmptyDataset);
    }
    let images: Vec<&ImageTensor> = pairs
        .iter()
        .flat_map(|p| [p.better().as_ref(), p.worse().as_ref()])
        .collect();
    let s = ranker.score_batch(&images)?;
    let tuples: Vec<(f64, f64)> = s.chunks(2).map(|c| (c[0], c[1])).collect();
    Ok(accuracy_from_scores(&tuples))
}

/// Accuracy from `(better score, worse score)` tuples; ties count as wrong.
pub fn accuracy_from_scores(scores: &[(f64, f64)]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|(b, w)| b < w).count() as f64 / scores.len() as f64
}
