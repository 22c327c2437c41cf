use super::{Cache, Layer, Mode, NnError, Tensor4};

/// A chain of layers evaluated in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

/// Everything a backward pass through a [`Sequential`] needs.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Verifies that shapes chain for the given input dims and returns the output dims.
    pub fn check_dims(&self, input: [usize; 4]) -> Result<[usize; 4], NnError> {
        self.layers.iter().try_fold(input, |d, l| l.output_dims(d))
    }

    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, Trace), NnError> {
        self.check_dims(x.dims())?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&cur, mode)?;
            caches.push(cache);
            cur = y;
        }
        Ok((cur, Trace { caches }))
    }

    /// Returns the parameter gradients (flattened in [`Sequential::params`] order) and the input gradient.
    pub fn backward(&self, trace: &Trace, dy: &Tensor4) -> Result<(Vec<Vec<f64>>, Tensor4), NnError> {
        if trace.caches.len() != self.layers.len() {
            return Err(NnError::CacheMismatch { layer: "sequential" });
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut grad = dy.clone();
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            let g = layer.backward(cache, &grad)?;
            per_layer.push(g.params);
            grad = g.input;
        }
        per_layer.reverse();
        Ok((per_layer.into_iter().flatten().collect(), grad))
    }

    /// Updates batch-norm running statistics from a train-mode trace.
    pub fn absorb(&mut self, trace: &Trace) {
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (Layer::BatchNorm(bn), Cache::BatchNorm(c)) = (layer, cache) {
                bn.absorb(c);
            }
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
