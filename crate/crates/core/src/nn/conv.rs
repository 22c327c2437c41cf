use rayon::prelude::*;

use super::{LayerGrads, NnError, Tensor4};
use crate::rng::SeededRng;

/// Direct 2-D convolution with square kernels and zero padding.
///
/// Each output element is accumulated as `bias + sum_c sum_kh sum_kw`, in that
/// order, so results are bitwise reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `(out_ch, in_ch, kernel, kernel)`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output length of one spatial dimension.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output positions `j` in `0..out_len` whose tap `j * stride + k - pad` lands in `0..len`.
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // j * stride + k - pad < len  <=>  j * stride < len + pad - k
    let hi = if len + pad <= k {
        0
    } else {
        (len + pad - k).div_ceil(stride).min(out_len)
    };
    (lo.min(hi), hi)
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize, rng: &mut SeededRng) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weight = (0..out_ch * in_ch * kernel * kernel).map(|_| rng.normal() * std).collect();
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight,
            bias: vec![0.0; out_ch],
        }
    }

    pub fn output_dims(&self, input: [usize; 4]) -> Result<[usize; 4], NnError> {
        let [n, c, h, w] = input;
        let shape_err = || NnError::Shape {
            layer: "conv",
            expected: format!("{} channels and spatial size >= {}", self.in_ch, self.kernel.saturating_sub(2 * self.pad)),
            actual: input,
        };
        if c != self.in_ch {
            return Err(shape_err());
        }
        let oh = conv_out_len(h, self.kernel, self.stride, self.pad).ok_or_else(shape_err)?;
        let ow = conv_out_len(w, self.kernel, self.stride, self.pad).ok_or_else(shape_err)?;
        Ok([n, self.out_ch, oh, ow])
    }

    fn w(&self, o: usize, c: usize, kh: usize, kw: usize) -> f64 {
        self.weight[((o * self.in_ch + c) * self.kernel + kh) * self.kernel + kw]
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4, NnError> {
        let [n, _, oh, ow] = self.output_dims(x.dims())?;
        let [_, c_in, h, w] = x.dims();
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let in_plane = c_in * h * w;
        let out_plane = self.out_ch * oh * ow;
        let mut out = vec![0.0; n * out_plane];
        out.par_chunks_mut(out_plane).enumerate().for_each(|(b, yb)| {
            let xb = &x.data()[b * in_plane..(b + 1) * in_plane];
            for o in 0..self.out_ch {
                let yo = &mut yb[o * oh * ow..(o + 1) * oh * ow];
                yo.fill(self.bias[o]);
                for c in 0..c_in {
                    let xc = &xb[c * h * w..(c + 1) * h * w];
                    for kh in 0..k {
                        let (i0, i1) = valid_range(oh, h, kh, s, p);
                        for kw in 0..k {
                            let wv = self.w(o, c, kh, kw);
                            let (j0, j1) = valid_range(ow, w, kw, s, p);
                            for i in i0..i1 {
                                let row = &xc[(i * s + kh - p) * w..];
                                let yrow = &mut yo[i * ow..(i + 1) * ow];
                                if s == 1 {
                                    let xs = &row[j0 + kw - p..j1 + kw - p];
                                    for (yv, xv) in yrow[j0..j1].iter_mut().zip(xs) {
                                        *yv += wv * xv;
                                    }
                                } else {
                                    for j in j0..j1 {
                                        yrow[j] += wv * row[j * s + kw - p];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        Ok(Tensor4::new([n, self.out_ch, oh, ow], out))
    }

    pub fn backward(&self, x: &Tensor4, dy: &Tensor4) -> Result<LayerGrads, NnError> {
        let out_dims = self.output_dims(x.dims())?;
        if dy.dims() != out_dims {
            return Err(NnError::CacheMismatch { layer: "conv" });
        }
        let [n, c_in, h, w] = x.dims();
        let [_, _, oh, ow] = out_dims;
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let in_plane = c_in * h * w;
        let out_plane = self.out_ch * oh * ow;
        let wlen = self.weight.len();

        // Per-item partial gradients, reduced below in batch order.
        let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|b| {
                let xb = &x.data()[b * in_plane..(b + 1) * in_plane];
                let gb = &dy.data()[b * out_plane..(b + 1) * out_plane];
                let mut dx = vec![0.0; in_plane];
                let mut dw = vec![0.0; wlen];
                let mut db = vec![0.0; self.out_ch];
                for o in 0..self.out_ch {
                    let go = &gb[o * oh * ow..(o + 1) * oh * ow];
                    db[o] = go.iter().sum();
                    for c in 0..c_in {
                        let xc = &xb[c * h * w..(c + 1) * h * w];
                        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
                        for kh in 0..k {
                            let (i0, i1) = valid_range(oh, h, kh, s, p);
                            for kw in 0..k {
                                let widx = ((o * c_in + c) * k + kh) * k + kw;
                                let wv = self.weight[widx];
                                let (j0, j1) = valid_range(ow, w, kw, s, p);
                                let mut acc = 0.0;
                                for i in i0..i1 {
                                    let r = (i * s + kh - p) * w;
                                    let grow = &go[i * ow..(i + 1) * ow];
                                    if s == 1 {
                                        let start = r + j0 + kw - p;
                                        let end = start + (j1 - j0);
                                        let xs = &xc[start..end];
                                        for (gv, xv) in grow[j0..j1].iter().zip(xs) {
                                            acc += gv * xv;
                                        }
                                        let dxs = &mut dxc[start..end];
                                        for (d, gv) in dxs.iter_mut().zip(&grow[j0..j1]) {
                                            *d += wv * gv;
                                        }
                                    } else {
                                        for j in j0..j1 {
                                            let idx = r + j * s + kw - p;
                                            acc += grow[j] * xc[idx];
                                            dxc[idx] += wv * grow[j];
                                        }
                                    }
                                }
                                dw[widx] = acc;
                            }
                        }
                    }
                }
                (dx, dw, db)
            })
            .collect();

        let mut dx = Vec::with_capacity(n * in_plane);
        let mut dw = vec![0.0; wlen];
        let mut db = vec![0.0; self.out_ch];
        for (pdx, pdw, pdb) in partials {
            dx.extend(pdx);
            for (a, v) in dw.iter_mut().zip(pdw) {
                *a += v;
            }
            for (a, v) in db.iter_mut().zip(pdb) {
                *a += v;
            }
        }
        Ok(LayerGrads {
            params: vec![dw, db],
            input: Tensor4::new(x.dims(), dx),
        })
    }
}
