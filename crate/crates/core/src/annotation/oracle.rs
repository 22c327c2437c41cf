use super::{Choice, VoteRecord};
use crate::image::ImageTensor;
use crate::rng::SeededRng;

/// Utility of an image for a simulated annotator; 0 is the maximum.
///
/// Penalizes the distance of mean and standard deviation of luma from their
/// targets and the mean squared difference between channel means.
pub fn utility(img: &ImageTensor, exposure: f64, contrast: f64, weights: [f64; 3]) -> f64 {
    let luma = img.luma();
    let n = luma.len() as f64;
    let mean = luma.iter().sum::<f64>() / n;
    let std = (luma.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mu = img.channel_means();
    let color = if mu.len() == 3 {
        ((mu[0] - mu[1]).powi(2) + (mu[0] - mu[2]).powi(2) + (mu[1] - mu[2]).powi(2)) / 3.0
    } else {
        0.0
    };
    -weights[0] * (mean - exposure).powi(2) - weights[1] * (std - contrast).powi(2) - weights[2] * color
}

/// A deterministic stand-in for a human annotator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedAnnotator {
    pub annotator_id: String,
    pub target_exposure: f64,
    pub target_contrast: f64,
    pub weights: [f64; 3],
    /// Standard deviation of the per-image judgement noise.
    pub noise: f64,
    pub seed: u64,
}

impl SimulatedAnnotator {
    pub fn new(annotator_id: impl Into<String>, noise: f64, seed: u64) -> Self {
        Self {
            annotator_id: annotator_id.into(),
            target_exposure: 0.6,
            target_contrast: 0.18,
            weights: [1.0, 0.5, 0.25],
            noise,
            seed,
        }
    }

    pub fn utility(&self, img: &ImageTensor) -> f64 {
        utility(img, self.target_exposure, self.target_contrast, self.weights)
    }

    /// Compares the two images of `pair_id`; exact ties go to `prev`.
    /// The noise stream depends only on the seed, annotator and pair.
    pub fn vote(&self, pair_id: &str, prev: &ImageTensor, cur: &ImageTensor, timestamp: u64) -> VoteRecord {
        let mut rng = SeededRng::keyed(self.seed, &format!("{}\u{0}{}", self.annotator_id, pair_id));
        let p = self.utility(prev) + self.noise * rng.normal();
        let c = self.utility(cur) + self.noise * rng.normal();
        VoteRecord {
            pair_id: pair_id.to_string(),
            annotator_id: self.annotator_id.clone(),
            choice: if c > p { Choice::Cur } else { Choice::Prev },
            timestamp,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-level luma pattern with mean `m` and deviation `s`, gray channels.
    fn pattern(m: f64, s: f64) -> ImageTensor {
        let data = (0..16).flat_map(|i| [if i % 2 == 0 { m - s } else { m + s }; 3]).collect();
        ImageTensor::new(4, 4, 3, data).unwrap()
    }

    #[test]
    fn target_image_has_zero_utility() {
        let a = SimulatedAnnotator::new("a", 0.0, 0);
        assert!(a.utility(&pattern(0.6, 0.18)).abs() < 1e-15);
    }

    #[test]
    fn dark_image_penalty() {
        let a = SimulatedAnnotator::new("a", 0.0, 0);
        assert!((a.utility(&pattern(0.2, 0.18)) + 0.16).abs() < 1e-12);
    }

    #[test]
    fn spatial_permutation_invariance() {
        let a = SimulatedAnnotator::new("a", 0.0, 0);
        let img = ImageTensor::new(2, 2, 3, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        let mut data = img.data().to_vec();
        data.rotate_left(3);
        let permuted = ImageTensor::new(2, 2, 3, data).unwrap();
        assert!((a.utility(&img) - a.utility(&permuted)).abs() < 1e-15);
    }

    #[test]
    fn noiseless_votes_follow_utility_and_ties_go_to_prev() {
        let a = SimulatedAnnotator::new("a", 0.0, 1);
        let (dark, good) = (pattern(0.2, 0.18), pattern(0.6, 0.18));
        assert_eq!(a.vote("p", &dark, &good, 0).choice, Choice::Cur);
        assert_eq!(a.vote("p", &good, &dark, 0).choice, Choice::Prev);
        assert_eq!(a.vote("p", &good, &good, 0).choice, Choice::Prev);
    }

    #[test]
    fn votes_are_reproducible_per_pair() {
        let a = SimulatedAnnotator::new("a", 0.05, 7);
        let (x, y) = (pattern(0.5, 0.1), pattern(0.52, 0.1));
        let first = a.vote("s1-3", &x, &y, 5);
        assert_eq!(a.vote("s1-3", &x, &y, 5), first);
        let b = SimulatedAnnotator::new("b", 0.05, 7);
        let flips = (0..200)
            .filter(|i| a.vote(&format!("p{i}"), &x, &y, 0).choice != b.vote(&format!("p{i}"), &x, &y, 0).choice)
            .count();
        assert!(flips > 0, "annotators should draw independent noise");
    }
}
