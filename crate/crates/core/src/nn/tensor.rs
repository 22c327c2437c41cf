use crate::image::ImageTensor;

/// Dense `(batch, channels, height, width)` activations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    /// Panics if `data.len()` does not match `dims`.
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "tensor data length");
        Self { dims, data }
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::new(dims, vec![0.0; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Stacks equally sized images into a batch, converting HWC to CHW.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a ImageTensor>) -> Option<Tensor4> {
        let mut dims = None;
        let mut data = Vec::new();
        let mut n = 0;
        for img in images {
            let d = [img.channels(), img.height(), img.width()];
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => return None,
                _ => {}
            }
            let [c, h, w] = d;
            let src = img.data();
            for ch in 0..c {
                data.extend((0..h * w).map(|p| src[p * c + ch]));
            }
            n += 1;
        }
        let [c, h, w] = dims?;
        Some(Tensor4::new([n, c, h, w], data))
    }

    /// Converts batch item `b` back to HWC layout.
    pub fn image_data(&self, b: usize) -> Vec<f64> {
        let [_, c, h, w] = self.dims;
        let plane = &self.data[b * c * h * w..(b + 1) * c * h * w];
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                out[p * c + ch] = plane[ch * h * w + p];
            }
        }
        out
    }
}
