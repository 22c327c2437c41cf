//! Procedural scenes used when no image directories are configured.
//!
//! A scene is a smooth colored background with a few flat shapes, a band of
//! fine texture and mild sensor noise, exposed around mid-gray. The matching
//! low-light version applies a dimming gamma curve, a per-channel color cast
//! and extra noise. All draws come from streams keyed by `(seed, index)`.

use crate::image::ImageTensor;
use crate::rng::SeededRng;

/// A normal-light scene.
pub fn scene(height: usize, width: usize, seed: u64, index: u64) -> ImageTensor {
    let mut rng = SeededRng::keyed(seed, &format!("scene-{index}"));
    let mut px = vec![0.0; height * width * 3];

    let base: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(0.35, 0.65));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(-0.2, 0.2));
    let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 / width as f64 - 0.5) * ca + (y as f64 / height as f64 - 0.5) * sa;
            for c in 0..3 {
                px[(y * width + x) * 3 + c] = base[c] + tilt[c] * u;
            }
        }
    }

    let shapes = 3 + rng.index(4);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(0.1, 0.95));
        let cy = rng.uniform() * height as f64;
        let cx = rng.uniform() * width as f64;
        let r = rng.uniform_range(0.08, 0.3) * height.min(width) as f64;
        let disk = rng.uniform() < 0.5;
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let inside = if disk { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= 0.7 * r };
                if inside {
                    px[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&color);
                }
            }
        }
    }

    let freq = rng.uniform_range(0.3, 0.9);
    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let amp = rng.uniform_range(0.03, 0.08);
    for y in 0..height {
        for x in 0..width {
            let t = amp * ((x as f64 * freq + phase).sin() * (y as f64 * freq * 0.7).cos());
            for c in 0..3 {
                let i = (y * width + x) * 3 + c;
                px[i] = (px[i] + t + 0.015 * rng.normal()).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(height, width, 3, px).expect("scene buffer matches its shape").quantized()
}

/// The low-light counterpart of `scene(height, width, seed, index)`.
pub fn low_light(height: usize, width: usize, seed: u64, index: u64) -> ImageTensor {
    let bright = scene(height, width, seed, index);
    let mut rng = SeededRng::keyed(seed, &format!("dim-{index}"));
    let gain = rng.uniform_range(0.2, 0.4);
    let gamma = rng.uniform_range(1.1, 1.5);
    let cast: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(0.8, 1.1));
    let mut px = bright.into_data();
    for (i, v) in px.iter_mut().enumerate() {
        *v = (gain * cast[i % 3] * v.powf(gamma) + 0.002 * rng.normal()).clamp(0.0, 1.0);
    }
    ImageTensor::new(height, width, 3, px).expect("same shape").quantized()
}

/// Synthetic training and validation sets.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Low-light training inputs.
    pub train_low: Vec<ImageTensor>,
    /// Normal-light scenes, unpaired with `train_low`.
    pub normal: Vec<ImageTensor>,
    /// Low-light inputs never seen in training.
    pub validation_low: Vec<ImageTensor>,
}

impl SyntheticData {
    pub fn generate(size: usize, train: usize, normal: usize, validation: usize, seed: u64) -> Self {
        let low = |range: std::ops::Range<u64>| range.map(|i| low_light(size, size, seed, i)).collect::<Vec<_>>();
        let train_n = train as u64;
        let val_n = validation as u64;
        // disjoint index ranges keep the three sets content-distinct
        Self {
            train_low: low(0..train_n),
            validation_low: low(train_n..train_n + val_n),
            normal: (0..normal as u64)
                .map(|i| scene(size, size, seed, 1_000_000 + i))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_luma(img: &ImageTensor) -> f64 {
        let l = img.luma();
        l.iter().sum::<f64>() / l.len() as f64
    }

    #[test]
    fn scenes_are_deterministic_and_distinct() {
        assert_eq!(scene(32, 32, 1, 4), scene(32, 32, 1, 4));
        assert_ne!(scene(32, 32, 1, 4), scene(32, 32, 1, 5));
        assert_ne!(scene(32, 32, 1, 4), scene(32, 32, 2, 4));
    }

    #[test]
    fn low_light_is_darker() {
        for i in 0..10 {
            let (b, d) = (scene(32, 32, 3, i), low_light(32, 32, 3, i));
            assert!(mean_luma(&d) < 0.6 * mean_luma(&b));
            d.check_unit_range().unwrap();
        }
    }

    #[test]
    fn dataset_sizes() {
        let d = SyntheticData::generate(16, 4, 3, 2, 0);
        assert_eq!((d.train_low.len(), d.normal.len(), d.validation_low.len()), (4, 3, 2));
        assert_ne!(d.train_low[0], d.validation_low[0]);
    }
}
