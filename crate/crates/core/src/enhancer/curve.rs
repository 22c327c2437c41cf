use super::EnhanceError;
use crate::checkpoint::{ModelKind, ParamCheckpoint};
use crate::image::ImageTensor;

/// Iterative quadratic tone curve `y <- y + a * y * (1 - y)`.
///
/// The strength `a = tanh(raw)` is stored per iteration, per RGB channel and
/// per cell of a `grid x grid` lattice that is bilinearly upsampled to the
/// image size (`grid = 1` is a global curve). With `raw = 0` the map is the
/// identity, and since `|a| < 1` every iterate stays in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveEnhancer {
    iterations: usize,
    grid: usize,
    /// `(iterations, 3, grid, grid)`
    raw: Vec<f64>,
}

pub const DEFAULT_ITERATIONS: usize = 4;

/// Per-axis bilinear taps: `(cell0, cell1, weight of cell1)` per pixel.
fn axis_taps(len: usize, grid: usize) -> Vec<(usize, usize, f64)> {
    (0..len)
        .map(|i| {
            if grid == 1 || len == 1 {
                return (0, 0, 0.0);
            }
            let u = i as f64 * (grid - 1) as f64 / (len - 1) as f64;
            let c0 = (u.floor() as usize).min(grid - 2);
            (c0, c0 + 1, u - c0 as f64)
        })
        .collect()
}

impl CurveEnhancer {
    /// Identity enhancer (`raw = 0`).
    pub fn new(iterations: usize, grid: usize) -> Self {
        assert!(iterations > 0 && grid > 0, "iterations and grid must be positive");
        Self {
            iterations,
            grid,
            raw: vec![0.0; iterations * 3 * grid * grid],
        }
    }

    /// Builds an enhancer whose effective strengths equal `alphas` (each in `(-1, 1)`).
    pub fn from_alphas(iterations: usize, grid: usize, alphas: &[f64]) -> Self {
        let mut e = Self::new(iterations, grid);
        assert_eq!(alphas.len(), e.raw.len(), "alpha count");
        e.raw = alphas.iter().map(|a| a.atanh()).collect();
        e
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.raw.iter().map(|r| r.tanh()).collect()
    }

    fn cell(&self, t: usize, c: usize, gy: usize, gx: usize) -> usize {
        ((t * 3 + c) * self.grid + gy) * self.grid + gx
    }

    fn check_input(&self, x: &ImageTensor) -> Result<(), EnhanceError> {
        if x.channels() != 3 {
            return Err(EnhanceError::Channels(x.channels()));
        }
        x.check_unit_range().map_err(EnhanceError::Range)
    }

    /// Per-pixel strength maps, indexed `[t][c][pixel]`.
    fn alpha_maps(&self, h: usize, w: usize) -> Vec<Vec<Vec<f64>>> {
        let alphas = self.alphas();
        let rows = axis_taps(h, self.grid);
        let cols = axis_taps(w, self.grid);
        (0..self.iterations)
            .map(|t| {
                (0..3)
                    .map(|c| {
                        if self.grid == 1 {
                            return vec![alphas[self.cell(t, c, 0, 0)]; h * w];
                        }
                        let mut map = Vec::with_capacity(h * w);
                        for &(r0, r1, fy) in &rows {
                            for &(c0, c1, fx) in &cols {
                                let a = |gy, gx| alphas[self.cell(t, c, gy, gx)];
                                let top = a(r0, c0) * (1.0 - fx) + a(r0, c1) * fx;
                                let bottom = a(r1, c0) * (1.0 - fx) + a(r1, c1) * fx;
                                map.push(top * (1.0 - fy) + bottom * fy);
                            }
                        }
                        map
                    })
                    .collect()
            })
            .collect()
    }

    pub fn enhance(&self, x: &ImageTensor) -> Result<ImageTensor, EnhanceError> {
        self.check_input(x)?;
        let maps = self.alpha_maps(x.height(), x.width());
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let (p, c) = (i / 3, i % 3);
            let mut y = *v;
            for map in &maps {
                y += map[c][p] * y * (1.0 - y);
            }
            *v = y.clamp(0.0, 1.0);
        }
        Ok(out)
    }

    /// Gradient of a loss with respect to `raw`, given `dL/dy` for `y = enhance(x)`.
    pub fn enhance_grad(&self, x: &ImageTensor, dl_dy: &ImageTensor) -> Result<Vec<f64>, EnhanceError> {
        self.check_input(x)?;
        if !x.same_shape(dl_dy) {
            return Err(EnhanceError::GradShape);
        }
        if dl_dy.data().iter().any(|v| !v.is_finite()) {
            return Err(EnhanceError::NonFinite);
        }
        let (h, w) = (x.height(), x.width());
        let maps = self.alpha_maps(h, w);
        let t_count = self.iterations;
        // dL/d(alpha map) per iteration, channel and pixel.
        let mut d_map = vec![vec![vec![0.0; h * w]; 3]; t_count];
        let mut ys = vec![0.0; t_count + 1];
        for (i, (&x0, &g)) in x.data().iter().zip(dl_dy.data()).enumerate() {
            if g == 0.0 {
                continue;
            }
            let (p, c) = (i / 3, i % 3);
            ys[0] = x0;
            for t in 0..t_count {
                let y = ys[t];
                ys[t + 1] = y + maps[t][c][p] * y * (1.0 - y);
            }
            let mut dy = g;
            for t in (0..t_count).rev() {
                let y = ys[t];
                d_map[t][c][p] += dy * y * (1.0 - y);
                dy *= 1.0 + maps[t][c][p] * (1.0 - 2.0 * y);
            }
        }

        let mut grad = vec![0.0; self.raw.len()];
        let rows = axis_taps(h, self.grid);
        let cols = axis_taps(w, self.grid);
        for t in 0..t_count {
            for c in 0..3 {
                let dm = &d_map[t][c];
                if self.grid == 1 {
                    grad[self.cell(t, c, 0, 0)] = dm.iter().sum();
                    continue;
                }
                for (yi, &(r0, r1, fy)) in rows.iter().enumerate() {
                    for (xi, &(c0, c1, fx)) in cols.iter().enumerate() {
                        let g = dm[yi * w + xi];
                        grad[self.cell(t, c, r0, c0)] += g * (1.0 - fy) * (1.0 - fx);
                        grad[self.cell(t, c, r0, c1)] += g * (1.0 - fy) * fx;
                        grad[self.cell(t, c, r1, c0)] += g * fy * (1.0 - fx);
                        grad[self.cell(t, c, r1, c1)] += g * fy * fx;
                    }
                }
            }
        }
        for (g, r) in grad.iter_mut().zip(&self.raw) {
            let th = r.tanh();
            *g *= 1.0 - th * th;
        }
        Ok(grad)
    }

    pub fn to_checkpoint(&self, stage: u32) -> ParamCheckpoint {
        let mut ckpt = ParamCheckpoint::new(ModelKind::Enhancer, stage);
        ckpt.push("curve.raw", vec![self.iterations, 3, self.grid, self.grid], self.raw.clone())
            .expect("consistent curve shape");
        ckpt
    }

    pub fn from_checkpoint(ckpt: &ParamCheckpoint) -> Result<Self, EnhanceError> {
        ckpt.expect_kind(ModelKind::Enhancer)?;
        let entry = ckpt.require("curve.raw")?;
        match entry.shape.as_slice() {
            &[t, 3, g, g2] if t > 0 && g > 0 && g == g2 => Ok(Self {
                iterations: t,
                grid: g,
                raw: entry.values.clone(),
            }),
            other => Err(EnhanceError::BadCheckpointShape(other.to_vec())),
        }
    }
}
