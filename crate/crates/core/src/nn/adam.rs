use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `p -= lr * weight_decay * p` before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Gradients are validated first; on error nothing changes.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        let cfg = self.config;
        if !(cfg.lr > 0.0) {
            return Err(NnError::BadLearningRate(cfg.lr));
        }
        if params.len() != grads.len() {
            return Err(NnError::GradientShape {
                index: params.len().min(grads.len()),
                expected: params.len(),
                actual: grads.len(),
            });
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(NnError::GradientShape {
                    index,
                    expected: p.len(),
                    actual: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient(index));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                p[i] -= cfg.lr * cfg.weight_decay * p[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![0.3, -1.2];
        adam.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let lr = 0.01;
        let mut adam = Adam::new(AdamConfig { lr, ..Default::default() });
        let mut p = vec![0.0];
        adam.step(&mut [&mut p], &[&[1.0]]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + 1e-8)
        assert!((p[0] + lr / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((p[0] / -lr - 0.999_999_99).abs() < 1e-12);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut adam = Adam::new(AdamConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            ..Default::default()
        });
        let mut p = vec![1.0];
        adam.step(&mut [&mut p], &[&[0.0]]).unwrap();
        assert!((p[0] - 0.999_999_9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        let err = adam.step(&mut [&mut p], &[&[0.1, f64::NAN]]).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient(0));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut adam = Adam::new(AdamConfig {
            lr: 0.0,
            ..Default::default()
        });
        assert!(adam.step(&mut [&mut [1.0][..]], &[&[1.0]]).is_err());
    }
}
