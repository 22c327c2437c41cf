//! Layer primitives with hand-written forward and backward passes.
//!
//! Every layer maps a [`Tensor4`] in `(batch, channels, height, width)` layout
//! to another, returning a [`Cache`] holding exactly what its backward pass
//! needs. Parameters are plain `Vec<f64>` buffers so the optimizer and the
//! checkpoint format can address them by index and name.

mod adam;
mod batchnorm;
mod conv;
mod linear;
mod sequential;
mod tensor;

#[cfg(test)]
mod gradcheck;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::Linear;
pub use sequential::Sequential;
pub use tensor::Tensor4;

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NnError {
    #[error("{layer}: expected input {expected}, got {actual:?}")]
    Shape {
        layer: &'static str,
        expected: String,
        actual: [usize; 4],
    },
    #[error("batch normalization in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("{layer}: cache does not match the upstream gradient")]
    CacheMismatch { layer: &'static str },
    #[error("non-finite gradient in parameter tensor {0}")]
    NonFiniteGradient(usize),
    #[error("gradient tensor {index} has {actual} values, parameter has {expected}")]
    GradientShape {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Declarative description of a layer, used to build and validate networks.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        channels: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    GlobalAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    LeakyRelu { slope: f64 },
    GlobalAvgPool,
    Linear(Linear),
}

/// Forward-pass state consumed by [`Layer::backward`].
#[derive(Debug, Clone)]
pub enum Cache {
    Conv { input: Tensor4 },
    BatchNorm(batchnorm::BnCache),
    LeakyRelu { input: Tensor4 },
    GlobalAvgPool { input_dims: [usize; 4] },
    Linear { input: Tensor4 },
}

/// Parameter gradients (in [`Layer::params`] order) and the input gradient.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub params: Vec<Vec<f64>>,
    pub input: Tensor4,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv {
                in_ch: c.in_ch,
                out_ch: c.out_ch,
                kernel: c.kernel,
                stride: c.stride,
                pad: c.pad,
            },
            Layer::BatchNorm(b) => LayerSpec::BatchNorm { channels: b.channels() },
            Layer::LeakyRelu { slope } => LayerSpec::LeakyRelu { slope: *slope },
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Linear(l) => LayerSpec::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
            },
        }
    }

    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, Cache), NnError> {
        match self {
            Layer::Conv(c) => Ok((c.forward(x)?, Cache::Conv { input: x.clone() })),
            Layer::BatchNorm(b) => {
                let (y, cache) = b.forward(x, mode)?;
                Ok((y, Cache::BatchNorm(cache)))
            }
            Layer::LeakyRelu { slope } => {
                let s = *slope;
                let y = x.map(|v| if v > 0.0 { v } else { s * v });
                Ok((y, Cache::LeakyRelu { input: x.clone() }))
            }
            Layer::GlobalAvgPool => {
                let [n, c, h, w] = x.dims();
                let hw = h * w;
                let data = x.data().chunks_exact(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
                Ok((Tensor4::new([n, c, 1, 1], data), Cache::GlobalAvgPool { input_dims: x.dims() }))
            }
            Layer::Linear(l) => Ok((l.forward(x)?, Cache::Linear { input: x.clone() })),
        }
    }

    pub fn backward(&self, cache: &Cache, dy: &Tensor4) -> Result<LayerGrads, NnError> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Conv { input }) => c.backward(input, dy),
            (Layer::BatchNorm(b), Cache::BatchNorm(cache)) => b.backward(cache, dy),
            (Layer::LeakyRelu { slope }, Cache::LeakyRelu { input }) => {
                if input.dims() != dy.dims() {
                    return Err(NnError::CacheMismatch { layer: "leaky_relu" });
                }
                let data = input
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { slope * g })
                    .collect();
                Ok(LayerGrads {
                    params: Vec::new(),
                    input: Tensor4::new(input.dims(), data),
                })
            }
            (Layer::GlobalAvgPool, Cache::GlobalAvgPool { input_dims }) => {
                let [n, c, h, w] = *input_dims;
                if dy.dims() != [n, c, 1, 1] {
                    return Err(NnError::CacheMismatch { layer: "global_avg_pool" });
                }
                let hw = h * w;
                let scale = 1.0 / hw as f64;
                let mut data = Vec::with_capacity(n * c * hw);
                for &g in dy.data() {
                    data.extend(std::iter::repeat_n(g * scale, hw));
                }
                Ok(LayerGrads {
                    params: Vec::new(),
                    input: Tensor4::new(*input_dims, data),
                })
            }
            (Layer::Linear(l), Cache::Linear { input }) => l.backward(input, dy),
            _ => Err(NnError::CacheMismatch { layer: "layer" }),
        }
    }

    /// Trainable parameter tensors.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::LeakyRelu { .. } | Layer::GlobalAvgPool => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::LeakyRelu { .. } | Layer::GlobalAvgPool => Vec::new(),
        }
    }

    /// Output dims for a given input, or a shape error.
    pub fn output_dims(&self, input: [usize; 4]) -> Result<[usize; 4], NnError> {
        let [n, c, h, w] = input;
        match self {
            Layer::Conv(conv) => conv.output_dims(input),
            Layer::BatchNorm(b) => {
                if c != b.channels() {
                    return Err(NnError::Shape {
                        layer: "batchnorm",
                        expected: format!("{} channels", b.channels()),
                        actual: input,
                    });
                }
                Ok(input)
            }
            Layer::LeakyRelu { .. } => Ok(input),
            Layer::GlobalAvgPool => Ok([n, c, 1, 1]),
            Layer::Linear(l) => {
                if c * h * w != l.in_features {
                    return Err(NnError::Shape {
                        layer: "linear",
                        expected: format!("{} features", l.in_features),
                        actual: input,
                    });
                }
                Ok([n, l.out_features, 1, 1])
            }
        }
    }
}
