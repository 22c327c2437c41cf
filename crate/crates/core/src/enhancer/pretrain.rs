use super::{CurveEnhancer, EnhanceError};
use crate::checkpoint::ParamCheckpoint;
use crate::image::{ImageTensor, LUMA_WEIGHTS};
use crate::nn::{Adam, AdamConfig};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub grid: usize,
    pub exposure_target: f64,
    pub patch: usize,
    pub color_weight: f64,
    pub lr: f64,
    pub iters: usize,
    pub batch_size: usize,
    /// An intermediate checkpoint is kept at every multiple of this below `iters`.
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iterations: super::DEFAULT_ITERATIONS,
            grid: 1,
            exposure_target: 0.6,
            patch: 16,
            color_weight: 0.5,
            lr: 0.05,
            iters: 200,
            batch_size: 8,
            checkpoint_interval: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub enhancer: CurveEnhancer,
    pub intermediates: Vec<ParamCheckpoint>,
    pub loss_history: Vec<f64>,
}

impl PretrainOutput {
    pub fn final_checkpoint(&self) -> ParamCheckpoint {
        self.enhancer.to_checkpoint(0)
    }
}

/// Exposure plus weighted color-constancy loss of one output image, and its gradient.
///
/// Exposure is the mean over non-overlapping `patch x patch` tiles of
/// `(tile mean luma - target)^2`; tiles that do not fit are dropped (a side
/// shorter than `patch` uses one tile spanning it). Color constancy is the
/// sum of squared differences between the three channel means.
pub fn pretrain_loss(y: &ImageTensor, target: f64, patch: usize, color_weight: f64) -> (f64, ImageTensor) {
    let (h, w) = (y.height(), y.width());
    let (ph, pw) = (patch.min(h), patch.min(w));
    let (ny, nx) = (h / ph, w / pw);
    let tiles = (ny * nx) as f64;
    let luma = y.luma();
    let mut grad = ImageTensor::zeros_like(y);
    let mut exposure = 0.0;
    for ty in 0..ny {
        for tx in 0..nx {
            let mut sum = 0.0;
            for i in ty * ph..(ty + 1) * ph {
                sum += luma[i * w + tx * pw..i * w + (tx + 1) * pw].iter().sum::<f64>();
            }
            let m = sum / (ph * pw) as f64;
            exposure += (m - target).powi(2) / tiles;
            let dm = 2.0 * (m - target) / tiles / (ph * pw) as f64;
            for i in ty * ph..(ty + 1) * ph {
                for j in tx * pw..(tx + 1) * pw {
                    for (c, lw) in LUMA_WEIGHTS.iter().enumerate() {
                        let v = grad.get(i, j, c) + dm * lw;
                        grad.set(i, j, c, v);
                    }
                }
            }
        }
    }

    let mu = y.channel_means();
    let mut color = 0.0;
    let mut dmu = [0.0; 3];
    for a in 0..3 {
        for b in a + 1..3 {
            let d = mu[a] - mu[b];
            color += d * d;
            dmu[a] += 2.0 * d;
            dmu[b] -= 2.0 * d;
        }
    }
    let px = (h * w) as f64;
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        *g += color_weight * dmu[i % 3] / px;
    }
    (exposure + color_weight * color, grad)
}

/// Trains a curve enhancer from the identity on the zero-reference objective.
pub fn pretrain(inputs: &[ImageTensor], config: &PretrainConfig) -> Result<PretrainOutput, EnhanceError> {
    if inputs.is_empty() {
        return Err(EnhanceError::EmptyDataset);
    }
    let mut enhancer = CurveEnhancer::new(config.iterations, config.grid);
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..Default::default()
    });
    let mut rng = SeededRng::keyed(config.seed, "pretrain");
    let mut intermediates = Vec::new();
    let mut loss_history = Vec::with_capacity(config.iters);
    let batch = config.batch_size.clamp(1, inputs.len());

    for it in 0..config.iters {
        if config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0 {
            intermediates.push(enhancer.to_checkpoint(0));
        }
        let mut loss = 0.0;
        let mut grad = vec![0.0; enhancer.raw().len()];
        for _ in 0..batch {
            let x = &inputs[rng.index(inputs.len())];
            let y = enhancer.enhance(x)?;
            let (l, dy) = pretrain_loss(&y, config.exposure_target, config.patch, config.color_weight);
            let g = enhancer.enhance_grad(x, &dy)?;
            loss += l / batch as f64;
            for (a, v) in grad.iter_mut().zip(g) {
                *a += v / batch as f64;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(EnhanceError::Diverged {
                iteration: it,
                last_finite: Box::new(enhancer.to_checkpoint(0)),
            });
        }
        loss_history.push(loss);
        adam.step(&mut [enhancer.raw_mut()], &[&grad])?;
    }
    Ok(PretrainOutput {
        enhancer,
        intermediates,
        loss_history,
    })
}
