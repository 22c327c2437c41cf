use std::sync::Arc;

use rayon::prelude::*;

use super::{niqe_score, BootstrapError, NiqeLabel, PristineModel};
use crate::enhancer::CurveEnhancer;
use crate::image::ImageTensor;
use crate::ranker::LabeledPair;

/// Two versions of one input, by checkpoint index, with `better` scoring lower.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapPair {
    pub input: usize,
    pub better: usize,
    pub worse: usize,
}

#[derive(Debug, Clone)]
pub struct BootstrapSet {
    /// `outputs[c][i]`: checkpoint `c` applied to input `i`, quantized to 8 bits.
    pub outputs: Vec<Vec<Arc<ImageTensor>>>,
    pub labels: Vec<Vec<NiqeLabel>>,
    pub pairs: Vec<BootstrapPair>,
}

impl BootstrapSet {
    /// Ranker training pairs for the inputs accepted by `keep`.
    pub fn labeled_pairs(&self, keep: impl Fn(usize) -> bool) -> Vec<LabeledPair> {
        self.pairs
            .iter()
            .filter(|p| keep(p.input))
            .map(|p| LabeledPair::ordered(self.outputs[p.better][p.input].clone(), self.outputs[p.worse][p.input].clone()))
            .collect()
    }
}

/// Renders every input through every checkpoint, labels the outputs with
/// NIQE-lite and pairs up same-input versions whose labels differ.
pub fn build_bootstrap_dataset(
    enhancers: &[CurveEnhancer],
    inputs: &[ImageTensor],
    model: &PristineModel,
) -> Result<BootstrapSet, BootstrapError> {
    if enhancers.len() < 2 {
        return Err(BootstrapError::TooFewCheckpoints(enhancers.len()));
    }
    let mut outputs = Vec::with_capacity(enhancers.len());
    let mut labels = Vec::with_capacity(enhancers.len());
    for e in enhancers {
        let (out, lab): (Vec<_>, Vec<_>) = inputs
            .par_iter()
            .map(|x| -> Result<_, BootstrapError> {
                let y = e.enhance(x)?.quantized();
                let l = niqe_score(model, &y)?;
                Ok((Arc::new(y), l))
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .unzip();
        outputs.push(out);
        labels.push(lab);
    }
    let mut pairs = Vec::new();
    for input in 0..inputs.len() {
        for a in 0..enhancers.len() {
            for b in a + 1..enhancers.len() {
                let (la, lb) = (labels[a][input], labels[b][input]);
                if la == lb {
                    continue;
                }
                let (better, worse) = if la < lb { (a, b) } else { (b, a) };
                pairs.push(BootstrapPair { input, better, worse });
            }
        }
    }
    if pairs.is_empty() {
        return Err(BootstrapError::NoPairs);
    }
    Ok(BootstrapSet { outputs, labels, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::{fit_pristine, DEFAULT_PATCH};
    use crate::synth;

    fn setup() -> (PristineModel, Vec<ImageTensor>) {
        let normal: Vec<ImageTensor> = (0..10).map(|i| synth::scene(64, 64, 5, 100 + i)).collect();
        let inputs = (0..4).map(|i| synth::low_light(64, 64, 5, i)).collect();
        (fit_pristine(&normal, DEFAULT_PATCH, 0.75).unwrap(), inputs)
    }

    #[test]
    fn pairs_have_distinct_labels_and_match_scores() {
        let (model, inputs) = setup();
        let enhancers: Vec<CurveEnhancer> = [0.0, 0.4, 0.8]
            .iter()
            .map(|&a| CurveEnhancer::from_alphas(4, 1, &[a; 12]))
            .collect();
        let set = build_bootstrap_dataset(&enhancers, &inputs, &model).unwrap();
        assert_eq!(set.outputs.len(), 3);
        assert_eq!(set.outputs[0].len(), 4);
        assert!(set.pairs.len() <= 12);
        for p in &set.pairs {
            assert!(set.labels[p.better][p.input] < set.labels[p.worse][p.input]);
        }
        // spot-check that stored labels are plain metric outputs
        let y = enhancers[1].enhance(&inputs[2]).unwrap().quantized();
        assert_eq!(set.labels[1][2], niqe_score(&model, &y).unwrap());
        assert_eq!(set.labeled_pairs(|i| i < 2).len(), set.pairs.iter().filter(|p| p.input < 2).count());
    }

    #[test]
    fn identical_versions_are_never_paired() {
        let (model, inputs) = setup();
        let e = CurveEnhancer::new(4, 1);
        let r = build_bootstrap_dataset(&[e.clone(), e], &inputs, &model);
        assert!(matches!(r, Err(BootstrapError::NoPairs)));
        assert!(matches!(
            build_bootstrap_dataset(&[CurveEnhancer::new(4, 1)], &inputs, &model),
            Err(BootstrapError::TooFewCheckpoints(1))
        ));
    }
}
