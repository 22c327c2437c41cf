use super::{dims, EnhanceError};
use crate::image::ImageTensor;

const RADIUS: usize = 2;
const SIGMA: f64 = 1.0;

/// Fixed Gaussian pyramid used as the content feature map.
///
/// Level 0 is the blurred image; each further level blurs the previous one
/// and keeps every second row and column. Blur taps clamp at the border.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentFeatureExtractor {
    levels: usize,
    taps: [f64; 2 * RADIUS + 1],
}

impl Default for ContentFeatureExtractor {
    fn default() -> Self {
        Self::new(3)
    }
}

/// One channel plane, row-major.
#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl ContentFeatureExtractor {
    pub fn new(levels: usize) -> Self {
        assert!(levels > 0, "at least one pyramid level");
        let mut taps = [0.0; 2 * RADIUS + 1];
        for (i, t) in taps.iter_mut().enumerate() {
            let d = i as f64 - RADIUS as f64;
            *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        }
        let s: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= s);
        Self { levels, taps }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    fn blur_1d(&self, src: &[f64], dst: &mut [f64], len: usize, stride: usize, count: usize, step: usize) {
        for k in 0..count {
            let base = k * step;
            for i in 0..len {
                let mut acc = 0.0;
                for (t, &wt) in self.taps.iter().enumerate() {
                    let j = (i + t).saturating_sub(RADIUS).min(len - 1);
                    acc += wt * src[base + j * stride];
                }
                dst[base + i * stride] = acc;
            }
        }
    }

    /// Transpose of `blur_1d`: scatters each output back onto its taps.
    fn blur_1d_adjoint(&self, src: &[f64], dst: &mut [f64], len: usize, stride: usize, count: usize, step: usize) {
        for k in 0..count {
            let base = k * step;
            for i in 0..len {
                dst[base + i * stride] = 0.0;
            }
            for i in 0..len {
                let g = src[base + i * stride];
                for (t, &wt) in self.taps.iter().enumerate() {
                    let j = (i + t).saturating_sub(RADIUS).min(len - 1);
                    dst[base + j * stride] += wt * g;
                }
            }
        }
    }

    fn blur(&self, p: &Plane) -> Plane {
        let mut tmp = vec![0.0; p.v.len()];
        let mut out = vec![0.0; p.v.len()];
        self.blur_1d(&p.v, &mut tmp, p.w, 1, p.h, p.w);
        self.blur_1d(&tmp, &mut out, p.h, p.w, p.w, 1);
        Plane { h: p.h, w: p.w, v: out }
    }

    fn blur_adjoint(&self, p: &Plane) -> Plane {
        let mut tmp = vec![0.0; p.v.len()];
        let mut out = vec![0.0; p.v.len()];
        self.blur_1d_adjoint(&p.v, &mut tmp, p.h, p.w, p.w, 1);
        self.blur_1d_adjoint(&tmp, &mut out, p.w, 1, p.h, p.w);
        Plane { h: p.h, w: p.w, v: out }
    }

    fn down(p: &Plane) -> Plane {
        let (h, w) = (p.h.div_ceil(2), p.w.div_ceil(2));
        let mut v = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                v.push(p.v[2 * i * p.w + 2 * j]);
            }
        }
        Plane { h, w, v }
    }

    fn down_adjoint(p: &Plane, h: usize, w: usize) -> Plane {
        let mut v = vec![0.0; h * w];
        for i in 0..p.h {
            for j in 0..p.w {
                v[2 * i * w + 2 * j] = p.v[i * p.w + j];
            }
        }
        Plane { h, w, v }
    }

    fn pyramid(&self, p: Plane) -> Vec<Plane> {
        let mut out = Vec::with_capacity(self.levels);
        out.push(self.blur(&p));
        for l in 1..self.levels {
            let next = Self::down(&self.blur(&out[l - 1]));
            out.push(next);
        }
        out
    }

    fn planes(img: &ImageTensor) -> Vec<Plane> {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        (0..c)
            .map(|ch| Plane {
                h,
                w,
                v: img.data().iter().skip(ch).step_by(c).copied().collect(),
            })
            .collect()
    }

    /// Feature maps per level, each flattened over channels.
    pub fn features(&self, img: &ImageTensor) -> Vec<Vec<f64>> {
        let mut levels = vec![Vec::new(); self.levels];
        for plane in Self::planes(img) {
            for (l, p) in self.pyramid(plane).into_iter().enumerate() {
                levels[l].extend(p.v);
            }
        }
        levels
    }

    /// Sum over levels of the mean squared feature difference, with its gradient w.r.t. `a`.
    pub fn content_loss(&self, a: &ImageTensor, b: &ImageTensor) -> Result<(f64, ImageTensor), EnhanceError> {
        if !a.same_shape(b) {
            return Err(EnhanceError::ShapeMismatch { a: dims(a), b: dims(b) });
        }
        let c = a.channels();
        let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let diff = ImageTensor::new(a.height(), a.width(), c, diff).expect("same shape as a");

        // The pyramid is linear, so phi(a) - phi(b) = phi(a - b).
        let per_channel: Vec<Vec<Plane>> = Self::planes(&diff).into_iter().map(|p| self.pyramid(p)).collect();
        let counts: Vec<usize> = (0..self.levels)
            .map(|l| per_channel.iter().map(|pyr| pyr[l].v.len()).sum())
            .collect();
        let mut loss = 0.0;
        for l in 0..self.levels {
            let ss: f64 = per_channel.iter().flat_map(|pyr| pyr[l].v.iter()).map(|v| v * v).sum();
            loss += ss / counts[l] as f64;
        }

        let mut grad = ImageTensor::zeros_like(a);
        for (ch, pyr) in per_channel.iter().enumerate() {
            let scale = |l: usize| 2.0 / counts[l] as f64;
            let top = self.levels - 1;
            let mut g = Plane {
                h: pyr[top].h,
                w: pyr[top].w,
                v: pyr[top].v.iter().map(|v| v * scale(top)).collect(),
            };
            for l in (1..self.levels).rev() {
                let parent = &pyr[l - 1];
                let up = self.blur_adjoint(&Self::down_adjoint(&g, parent.h, parent.w));
                g = Plane {
                    h: parent.h,
                    w: parent.w,
                    v: up.v.iter().zip(&parent.v).map(|(u, f)| u + f * scale(l - 1)).collect(),
                };
            }
            let g0 = self.blur_adjoint(&g);
            for (i, v) in g0.v.into_iter().enumerate() {
                grad.data_mut()[i * c + ch] = v;
            }
        }
        Ok((loss, grad))
    }
}
