use super::{LayerGrads, NnError, Tensor4};
use crate::rng::SeededRng;

/// Fully connected layer over the flattened `(channels, height, width)` of each item.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out_features, in_features)`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn new(in_features: usize, out_features: usize, rng: &mut SeededRng) -> Self {
        let std = (2.0 / in_features as f64).sqrt();
        Self {
            in_features,
            out_features,
            weight: (0..in_features * out_features).map(|_| rng.normal() * std).collect(),
            bias: vec![0.0; out_features],
        }
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    fn check(&self, x: &Tensor4) -> Result<usize, NnError> {
        let [n, c, h, w] = x.dims();
        if c * h * w != self.in_features {
            return Err(NnError::Shape {
                layer: "linear",
                expected: format!("{} features", self.in_features),
                actual: x.dims(),
            });
        }
        Ok(n)
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4, NnError> {
        let n = self.check(x)?;
        let mut out = Vec::with_capacity(n * self.out_features);
        for xb in x.data().chunks_exact(self.in_features) {
            for o in 0..self.out_features {
                let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                out.push(self.bias[o] + row.iter().zip(xb).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        Ok(Tensor4::new([n, self.out_features, 1, 1], out))
    }

    pub fn backward(&self, x: &Tensor4, dy: &Tensor4) -> Result<LayerGrads, NnError> {
        let n = self.check(x)?;
        if dy.dims() != [n, self.out_features, 1, 1] {
            return Err(NnError::CacheMismatch { layer: "linear" });
        }
        let (fi, fo) = (self.in_features, self.out_features);
        let mut dw = vec![0.0; fi * fo];
        let mut db = vec![0.0; fo];
        let mut dx = vec![0.0; n * fi];
        for b in 0..n {
            let xb = &x.data()[b * fi..(b + 1) * fi];
            let gb = &dy.data()[b * fo..(b + 1) * fo];
            for o in 0..fo {
                let g = gb[o];
                db[o] += g;
                let row = &self.weight[o * fi..(o + 1) * fi];
                for i in 0..fi {
                    dw[o * fi + i] += g * xb[i];
                    dx[b * fi + i] += g * row[i];
                }
            }
        }
        Ok(LayerGrads {
            params: vec![dw, db],
            input: Tensor4::new(x.dims(), dx),
        })
    }
}
