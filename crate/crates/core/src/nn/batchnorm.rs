use super::{LayerGrads, Mode, NnError, Tensor4};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization over `(batch, height, width)`.
///
/// Train mode normalizes with biased batch statistics; running statistics are
/// exponential moving averages (momentum 0.1, unbiased variance) and are only
/// updated through [`BatchNorm2d::absorb`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    mode: Mode,
    x_hat: Tensor4,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var_unbiased: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, BnCache), NnError> {
        let [n, c, h, w] = x.dims();
        if c != self.channels() {
            return Err(NnError::Shape {
                layer: "batchnorm",
                expected: format!("{} channels", self.channels()),
                actual: x.dims(),
            });
        }
        if mode == Mode::Train && n < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        let hw = h * w;
        let count = (n * hw) as f64;
        let plane = |b: usize, ch: usize| &x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];

        let (mean, var, var_unbiased) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                let mut var_u = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += plane(b, ch).iter().sum::<f64>();
                    }
                    let m = s / count;
                    let mut sq = 0.0;
                    for b in 0..n {
                        sq += plane(b, ch).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = sq / count;
                    var_u[ch] = if count > 1.0 { sq / (count - 1.0) } else { 0.0 };
                }
                (mean, var, var_u)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), Vec::new()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut x_hat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let (m, is, g, be) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
                for (i, &v) in plane(b, ch).iter().enumerate() {
                    let xh = (v - m) * is;
                    x_hat[off + i] = xh;
                    y[off + i] = g * xh + be;
                }
            }
        }
        Ok((
            Tensor4::new(x.dims(), y),
            BnCache {
                mode,
                x_hat: Tensor4::new(x.dims(), x_hat),
                inv_std,
                batch_mean: mean,
                batch_var_unbiased: var_unbiased,
            },
        ))
    }

    pub fn backward(&self, cache: &BnCache, dy: &Tensor4) -> Result<LayerGrads, NnError> {
        if dy.dims() != cache.x_hat.dims() {
            return Err(NnError::CacheMismatch { layer: "batchnorm" });
        }
        let [n, c, h, w] = dy.dims();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            for b in 0..n {
                let off = (b * c + ch) * hw;
                let g = &dy.data()[off..off + hw];
                let xh = &cache.x_hat.data()[off..off + hw];
                dbeta[ch] += g.iter().sum::<f64>();
                dgamma[ch] += g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                let scale = self.gamma[ch] * cache.inv_std[ch];
                for i in off..off + hw {
                    dx[i] = match cache.mode {
                        Mode::Eval => scale * dy.data()[i],
                        Mode::Train => {
                            scale / count * (count * dy.data()[i] - dbeta[ch] - cache.x_hat.data()[i] * dgamma[ch])
                        }
                    };
                }
            }
        }
        Ok(LayerGrads {
            params: vec![dgamma, dbeta],
            input: Tensor4::new(dy.dims(), dx),
        })
    }

    /// Folds the batch statistics of a train-mode forward into the running averages.
    pub fn absorb(&mut self, cache: &BnCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for ch in 0..self.channels() {
            self.running_mean[ch] = (1.0 - BN_MOMENTUM) * self.running_mean[ch] + BN_MOMENTUM * cache.batch_mean[ch];
            self.running_var[ch] =
                (1.0 - BN_MOMENTUM) * self.running_var[ch] + BN_MOMENTUM * cache.batch_var_unbiased[ch];
        }
    }
}
