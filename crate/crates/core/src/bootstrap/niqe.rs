use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::gamma::gamma;

use super::BootstrapError;
use crate::checkpoint::{ModelKind, ParamCheckpoint};
use crate::image::ImageTensor;

pub const FEATURES: usize = 18;
pub const DEFAULT_PATCH: usize = 32;
pub const MIN_SAMPLES: usize = 32;
const WINDOW: usize = 7;
const WINDOW_SIGMA: f64 = 7.0 / 6.0;
const MSCN_C: f64 = 1.0 / 255.0;
const REGULARIZATION: f64 = 1e-6;
pub const MIN_SCORED_SIDE: usize = 64;

/// A single-channel plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn luma(img: &ImageTensor) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            data: img.luma(),
        }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

fn window_taps() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut taps = [0.0; WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable Gaussian filtering with replicated borders.
fn gaussian_filter(p: &Plane) -> Vec<f64> {
    let taps = window_taps();
    let r = WINDOW / 2;
    let (h, w) = (p.height, p.width);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * p.data[y * w + (x + k).saturating_sub(r).min(w - 1)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[(y + k).saturating_sub(r).min(h - 1) * w + x])
                .sum();
        }
    }
    out
}

/// Mean-subtracted contrast-normalized coefficients and the local deviation map.
pub fn mscn_with_sigma(luma: &Plane) -> Result<(Plane, Plane), BootstrapError> {
    if luma.height < WINDOW || luma.width < WINDOW {
        return Err(BootstrapError::TooSmall {
            height: luma.height,
            width: luma.width,
            min: WINDOW,
        });
    }
    let mu = gaussian_filter(luma);
    let sq = Plane {
        data: luma.data.iter().map(|v| v * v).collect(),
        ..*luma
    };
    let mu_sq = gaussian_filter(&sq);
    let sigma: Vec<f64> = mu.iter().zip(&mu_sq).map(|(m, s)| (s - m * m).abs().sqrt()).collect();
    let data = luma
        .data
        .iter()
        .zip(&mu)
        .zip(&sigma)
        .map(|((i, m), s)| (i - m) / (s + MSCN_C))
        .collect();
    let shape = |data| Plane {
        height: luma.height,
        width: luma.width,
        data,
    };
    Ok((shape(data), shape(sigma)))
}

pub fn mscn(luma: &Plane) -> Result<Plane, BootstrapError> {
    Ok(mscn_with_sigma(luma)?.0)
}

const SHAPE_MIN: f64 = 0.2;
const SHAPE_STEP: f64 = 0.001;
const SHAPE_COUNT: usize = 9801;

/// `(shape, Gamma(1/a), Gamma(2/a), Gamma(3/a))` over the shape grid.
fn shape_grid() -> &'static [(f64, f64, f64, f64)] {
    static GRID: OnceLock<Vec<(f64, f64, f64, f64)>> = OnceLock::new();
    GRID.get_or_init(|| {
        (0..SHAPE_COUNT)
            .map(|i| {
                let a = SHAPE_MIN + i as f64 * SHAPE_STEP;
                (a, gamma(1.0 / a), gamma(2.0 / a), gamma(3.0 / a))
            })
            .collect()
    })
}

/// Grid entry whose `ratio` is closest to `target` (first on ties).
fn nearest_shape(target: f64, ratio: impl Fn(&(f64, f64, f64, f64)) -> f64) -> (f64, f64, f64, f64) {
    let mut best = shape_grid()[0];
    let mut best_err = f64::INFINITY;
    for g in shape_grid() {
        let err = (ratio(g) - target).abs();
        if err < best_err {
            best_err = err;
            best = *g;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgdFit {
    pub shape: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggdFit {
    pub shape: f64,
    pub mean: f64,
    pub left_variance: f64,
    pub right_variance: f64,
}

fn check_samples(samples: &[f64]) -> Result<(), BootstrapError> {
    if samples.len() < MIN_SAMPLES {
        return Err(BootstrapError::TooFewSamples(samples.len()));
    }
    if samples.iter().all(|&v| v == 0.0) {
        return Err(BootstrapError::Degenerate);
    }
    Ok(())
}

/// Zero-mean generalized Gaussian fit by moment matching.
pub fn fit_ggd(samples: &[f64]) -> Result<GgdFit, BootstrapError> {
    check_samples(samples)?;
    let n = samples.len() as f64;
    let variance = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let abs_mean = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let rho = variance / (abs_mean * abs_mean);
    let (shape, ..) = nearest_shape(rho, |&(_, g1, g2, g3)| g1 * g3 / (g2 * g2));
    Ok(GgdFit { shape, variance })
}

/// Asymmetric generalized Gaussian fit with separate left and right spreads.
pub fn fit_aggd(samples: &[f64]) -> Result<AggdFit, BootstrapError> {
    check_samples(samples)?;
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in samples {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    if ln == 0 || rn == 0 {
        return Err(BootstrapError::Degenerate);
    }
    let (left_variance, right_variance) = (ls / ln as f64, rs / rn as f64);
    let (sl, sr) = (left_variance.sqrt(), right_variance.sqrt());
    let g = sl / sr;
    let n = samples.len() as f64;
    let abs_mean = samples.iter().map(|v| v.abs()).sum::<f64>() / n;
    let sq_mean = samples.iter().map(|v| v * v).sum::<f64>() / n;
    let r_hat = abs_mean * abs_mean / sq_mean;
    let big_r = r_hat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let (shape, g1, g2, g3) = nearest_shape(big_r, |&(_, g1, g2, g3)| g2 * g2 / (g1 * g3));
    let scale = (g1 / g3).sqrt();
    let mean = (sr * scale - sl * scale) * g2 / g1;
    Ok(AggdFit {
        shape,
        mean,
        left_variance,
        right_variance,
    })
}

/// The 18 natural-scene features of one MSCN patch, or `None` if it is flat.
pub fn patch_features(m: &Plane) -> Option<[f64; FEATURES]> {
    let mut f = [0.0; FEATURES];
    let ggd = fit_ggd(&m.data).ok()?;
    f[0] = ggd.shape;
    f[1] = ggd.variance;
    let (h, w) = (m.height, m.width);
    let offsets: [(usize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    for (k, &(dy, dx)) in offsets.iter().enumerate() {
        let mut prod = Vec::with_capacity(h * w);
        for y in 0..h - dy {
            for x in 0..w {
                let x2 = x as isize + dx;
                if x2 < 0 || x2 >= w as isize {
                    continue;
                }
                prod.push(m.at(y, x) * m.at(y + dy, x2 as usize));
            }
        }
        let a = fit_aggd(&prod).ok()?;
        f[2 + 4 * k..6 + 4 * k].copy_from_slice(&[a.shape, a.mean, a.left_variance, a.right_variance]);
    }
    Some(f)
}

fn crop(p: &Plane, y0: usize, x0: usize, size: usize) -> Plane {
    let mut data = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        data.extend_from_slice(&p.data[y * p.width + x0..y * p.width + x0 + size]);
    }
    Plane {
        height: size,
        width: size,
        data,
    }
}

/// A non-overlapping patch: its MSCN values and mean local deviation.
struct Patch {
    mscn: Plane,
    sharpness: f64,
}

fn patches(img: &ImageTensor, size: usize) -> Result<Vec<Patch>, BootstrapError> {
    let (m, sigma) = mscn_with_sigma(&Plane::luma(img))?;
    let mut out = Vec::new();
    for py in 0..img.height() / size {
        for px in 0..img.width() / size {
            let s = crop(&sigma, py * size, px * size, size);
            out.push(Patch {
                mscn: crop(&m, py * size, px * size, size),
                sharpness: s.data.iter().sum::<f64>() / s.data.len() as f64,
            });
        }
    }
    Ok(out)
}

fn mean_and_cov(rows: &[[f64; FEATURES]]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let mut mean = DVector::zeros(FEATURES);
    for r in rows {
        mean += DVector::from_row_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(FEATURES, FEATURES);
    for r in rows {
        let d = DVector::from_row_slice(r) - &mean;
        cov += &d * d.transpose();
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Multivariate Gaussian over patch features of a pristine corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PristineModel {
    pub mean: Vec<f64>,
    /// Row-major `FEATURES x FEATURES`.
    pub cov: Vec<f64>,
    pub patch_count: usize,
}

impl PristineModel {
    pub fn to_checkpoint(&self) -> ParamCheckpoint {
        // Stored alongside the stage-0 ranker it labels for.
        let mut ck = ParamCheckpoint::new(ModelKind::Ranker, 0);
        ck.push("mean", vec![FEATURES], self.mean.clone()).expect("mean shape");
        ck.push("cov", vec![FEATURES, FEATURES], self.cov.clone()).expect("cov shape");
        ck.push("patch_count", vec![1], vec![self.patch_count as f64]).expect("count shape");
        ck
    }

    pub fn from_checkpoint(ck: &ParamCheckpoint) -> Result<Self, BootstrapError> {
        let mean = ck.require("mean")?.values.clone();
        let cov = ck.require("cov")?.values.clone();
        let patch_count = ck.get("patch_count").map_or(0, |e| e.values[0] as usize);
        if mean.len() != FEATURES || cov.len() != FEATURES * FEATURES {
            return Err(BootstrapError::BadModel);
        }
        Ok(Self { mean, cov, patch_count })
    }
}

/// Fits the pristine model on the sharpest patches of a normal-light corpus.
///
/// Patch sharpness is the mean local deviation; patches at or above the
/// corpus-wide `sharpness_quantile` are kept, flat ones are always dropped.
pub fn fit_pristine(images: &[ImageTensor], patch: usize, sharpness_quantile: f64) -> Result<PristineModel, BootstrapError> {
    if images.len() < 10 {
        return Err(BootstrapError::CorpusTooSmall(images.len()));
    }
    let per_image = images.par_iter().map(|img| patches(img, patch)).collect::<Result<Vec<_>, _>>()?;
    let all: Vec<Patch> = per_image.into_iter().flatten().collect();
    if all.is_empty() {
        return Err(BootstrapError::AllPatchesRejected);
    }
    let mut sharp: Vec<f64> = all.iter().map(|p| p.sharpness).collect();
    sharp.sort_by(f64::total_cmp);
    let q = sharpness_quantile.clamp(0.0, 1.0);
    let threshold = sharp[((sharp.len() - 1) as f64 * q).floor() as usize];
    let rows: Vec<[f64; FEATURES]> = all
        .par_iter()
        .filter(|p| p.sharpness >= threshold && p.sharpness > 0.0)
        .filter_map(|p| patch_features(&p.mscn))
        .collect();
    if rows.is_empty() {
        return Err(BootstrapError::AllPatchesRejected);
    }
    let (mean, cov) = mean_and_cov(&rows);
    Ok(PristineModel {
        mean: mean.iter().copied().collect(),
        cov: cov.transpose().iter().copied().collect(),
        patch_count: rows.len(),
    })
}

/// A NIQE-lite score in hundredths; lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NiqeLabel(pub u64);

impl NiqeLabel {
    pub fn from_raw(raw: f64) -> Self {
        NiqeLabel((raw * 100.0).round() as u64)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

/// Mahalanobis-style distance between the Gaussians of two feature sets.
pub fn feature_distance(mean1: &[f64], cov1: &[f64], mean2: &[f64], cov2: &[f64]) -> Result<f64, BootstrapError> {
    let d = DVector::from_column_slice(mean1) - DVector::from_column_slice(mean2);
    let c1 = DMatrix::from_row_slice(FEATURES, FEATURES, cov1);
    let c2 = DMatrix::from_row_slice(FEATURES, FEATURES, cov2);
    let mut m = (c1 + c2) / 2.0;
    for i in 0..FEATURES {
        m[(i, i)] += REGULARIZATION;
    }
    let x = match m.clone().cholesky() {
        Some(ch) => ch.solve(&d),
        None => m.lu().solve(&d).ok_or(BootstrapError::Singular)?,
    };
    let q = d.dot(&x);
    if !q.is_finite() {
        return Err(BootstrapError::Singular);
    }
    Ok(q.max(0.0).sqrt())
}

/// Raw (unquantized) distance of an image from the pristine model.
pub fn niqe_distance(model: &PristineModel, img: &ImageTensor, patch: usize) -> Result<f64, BootstrapError> {
    if img.height() < MIN_SCORED_SIDE || img.width() < MIN_SCORED_SIDE {
        return Err(BootstrapError::TooSmall {
            height: img.height(),
            width: img.width(),
            min: MIN_SCORED_SIDE,
        });
    }
    let rows: Vec<[f64; FEATURES]> = patches(img, patch)?.iter().filter_map(|p| patch_features(&p.mscn)).collect();
    if rows.is_empty() {
        return Err(BootstrapError::AllPatchesRejected);
    }
    let (mean, cov) = mean_and_cov(&rows);
    let mean: Vec<f64> = mean.iter().copied().collect();
    let cov: Vec<f64> = cov.transpose().iter().copied().collect();
    feature_distance(&model.mean, &model.cov, &mean, &cov)
}

pub fn niqe_score(model: &PristineModel, img: &ImageTensor) -> Result<NiqeLabel, BootstrapError> {
    Ok(NiqeLabel::from_raw(niqe_distance(model, img, DEFAULT_PATCH)?))
}
