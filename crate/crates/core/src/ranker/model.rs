use super::RankerError;
use crate::checkpoint::{ModelKind, ParamCheckpoint};
use crate::image::ImageTensor;
use crate::nn::{BatchNorm2d, Conv2d, Layer, Linear, Mode, Sequential, Tensor4};
use crate::rng::SeededRng;

/// Images scored per forward call when no gradients are needed.
const EVAL_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankerArch {
    pub blocks: usize,
    pub base_ch: usize,
    pub hidden: usize,
    pub slope: f64,
}

impl Default for RankerArch {
    fn default() -> Self {
        Self {
            blocks: 4,
            base_ch: 16,
            hidden: 64,
            slope: 0.2,
        }
    }
}

impl RankerArch {
    /// Smallest accepted image side: one pixel per stride-2 block.
    pub fn min_side(&self) -> usize {
        1 << self.blocks.div_ceil(2)
    }
}

/// Siamese quality ranker: one network, applied to each image of a pair.
/// Lower scores mean better perceived quality.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranker {
    arch: RankerArch,
    net: Sequential,
    names: Vec<String>,
}

impl Ranker {
    pub fn new(arch: RankerArch, seed: u64) -> Self {
        assert!(arch.blocks >= 1 && arch.base_ch >= 1 && arch.hidden >= 1, "degenerate ranker architecture");
        let mut rng = SeededRng::keyed(seed, "ranker-init");
        let act = Layer::LeakyRelu { slope: arch.slope };
        let mut layers = vec![Layer::Conv(Conv2d::new(3, arch.base_ch, 3, 1, 1, &mut rng)), act.clone()];
        let mut names = vec!["stem.conv".to_string(), "stem.act".to_string()];
        for b in 0..arch.blocks {
            let stride = if b % 2 == 0 { 2 } else { 1 };
            layers.push(Layer::Conv(Conv2d::new(arch.base_ch, arch.base_ch, 3, stride, 1, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm2d::new(arch.base_ch)));
            layers.push(act.clone());
            names.extend([format!("blocks.{b}.conv"), format!("blocks.{b}.bn"), format!("blocks.{b}.act")]);
        }
        layers.push(Layer::GlobalAvgPool);
        layers.push(Layer::Linear(Linear::new(arch.base_ch, arch.hidden, &mut rng)));
        layers.push(act);
        layers.push(Layer::Linear(Linear::new(arch.hidden, 1, &mut rng)));
        names.extend(["head.pool", "head.fc1", "head.act", "head.fc2"].map(String::from));
        Self {
            arch,
            net: Sequential::new(layers),
            names,
        }
    }

    pub fn arch(&self) -> RankerArch {
        self.arch
    }

    pub fn network(&self) -> &Sequential {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    /// Zeroes the final linear layer so every image scores exactly 0.
    pub fn zero_head(&mut self) {
        if let Some(Layer::Linear(l)) = self.net.layers.last_mut() {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    fn check_image(&self, img: &ImageTensor) -> Result<(), RankerError> {
        if img.channels() != 3 {
            return Err(RankerError::Channels(img.channels()));
        }
        let min = self.arch.min_side();
        if img.height() < min || img.width() < min {
            return Err(RankerError::TooSmall {
                height: img.height(),
                width: img.width(),
                min,
            });
        }
        img.check_unit_range().map_err(RankerError::Range)
    }

    pub(crate) fn batch(&self, images: &[&ImageTensor]) -> Result<Tensor4, RankerError> {
        for img in images {
            self.check_image(img)?;
        }
        Tensor4::from_images(images.iter().copied()).ok_or(RankerError::MixedSizes)
    }

    pub fn score(&self, img: &ImageTensor) -> Result<f64, RankerError> {
        Ok(self.score_batch(&[img])?[0])
    }

    /// Eval-mode scores. Items are independent, so chunking does not change results.
    pub fn score_batch(&self, images: &[&ImageTensor]) -> Result<Vec<f64>, RankerError> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EVAL_CHUNK) {
            let x = self.batch(chunk)?;
            let (y, _) = self.net.forward(&x, Mode::Eval)?;
            if !y.is_finite() {
                return Err(RankerError::NonFinite);
            }
            out.extend_from_slice(y.data());
        }
        Ok(out)
    }

    /// Eval-mode score and its gradient with respect to every pixel.
    pub fn score_input_grad(&self, img: &ImageTensor) -> Result<(f64, ImageTensor), RankerError> {
        let x = self.batch(&[img])?;
        let (y, trace) = self.net.forward(&x, Mode::Eval)?;
        if !y.is_finite() {
            return Err(RankerError::NonFinite);
        }
        let (_, dx) = self.net.backward(&trace, &Tensor4::new([1, 1, 1, 1], vec![1.0]))?;
        let grad = ImageTensor::new(img.height(), img.width(), 3, dx.image_data(0)).expect("image-shaped gradient");
        Ok((y.data()[0], grad))
    }

    pub fn to_checkpoint(&self, stage: u32) -> ParamCheckpoint {
        let a = self.arch;
        let mut ck = ParamCheckpoint::new(ModelKind::Ranker, stage);
        let push = |ck: &mut ParamCheckpoint, name: String, shape: Vec<usize>, v: &[f64]| {
            ck.push(name, shape, v.to_vec()).expect("ranker parameter shapes are consistent");
        };
        push(
            &mut ck,
            "arch".into(),
            vec![4],
            &[a.blocks as f64, a.base_ch as f64, a.hidden as f64, a.slope],
        );
        for (layer, name) in self.net.layers.iter().zip(&self.names) {
            match layer {
                Layer::Conv(c) => {
                    push(&mut ck, format!("{name}.weight"), vec![c.out_ch, c.in_ch, c.kernel, c.kernel], &c.weight);
                    push(&mut ck, format!("{name}.bias"), vec![c.out_ch], &c.bias);
                }
                Layer::BatchNorm(b) => {
                    let n = b.channels();
                    push(&mut ck, format!("{name}.gamma"), vec![n], &b.gamma);
                    push(&mut ck, format!("{name}.beta"), vec![n], &b.beta);
                    push(&mut ck, format!("{name}.running_mean"), vec![n], &b.running_mean);
                    push(&mut ck, format!("{name}.running_var"), vec![n], &b.running_var);
                }
                Layer::Linear(l) => {
                    push(&mut ck, format!("{name}.weight"), vec![l.out_features, l.in_features], &l.weight);
                    push(&mut ck, format!("{name}.bias"), vec![l.out_features], &l.bias);
                }
                Layer::LeakyRelu { .. } | Layer::GlobalAvgPool => {}
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &ParamCheckpoint) -> Result<Self, RankerError> {
        ck.expect_kind(ModelKind::Ranker)?;
        let arch_entry = ck.require("arch")?;
        let bad_arch = || RankerError::BadArch(arch_entry.values.clone());
        let [blocks, base, hidden, slope] = arch_entry.values[..] else {
            return Err(bad_arch());
        };
        let as_count = |v: f64| (v >= 1.0 && v.fract() == 0.0 && v < 1e6).then_some(v as usize);
        let arch = RankerArch {
            blocks: as_count(blocks).ok_or_else(bad_arch)?,
            base_ch: as_count(base).ok_or_else(bad_arch)?,
            hidden: as_count(hidden).ok_or_else(bad_arch)?,
            slope,
        };
        let mut r = Ranker::new(arch, 0);
        let load = |name: String, dst: &mut Vec<f64>| -> Result<(), RankerError> {
            let e = ck.require(&name)?;
            if e.values.len() != dst.len() {
                return Err(RankerError::ParamSize {
                    name,
                    expected: dst.len(),
                    actual: e.values.len(),
                });
            }
            dst.copy_from_slice(&e.values);
            Ok(())
        };
        for (layer, name) in r.net.layers.iter_mut().zip(&r.names) {
            match layer {
                Layer::Conv(c) => {
                    load(format!("{name}.weight"), &mut c.weight)?;
                    load(format!("{name}.bias"), &mut c.bias)?;
                }
                Layer::BatchNorm(b) => {
                    load(format!("{name}.gamma"), &mut b.gamma)?;
                    load(format!("{name}.beta"), &mut b.beta)?;
                    load(format!("{name}.running_mean"), &mut b.running_mean)?;
                    load(format!("{name}.running_var"), &mut b.running_var)?;
                }
                Layer::Linear(l) => {
                    load(format!("{name}.weight"), &mut l.weight)?;
                    load(format!("{name}.bias"), &mut l.bias)?;
                }
                Layer::LeakyRelu { .. } | Layer::GlobalAvgPool => {}
            }
        }
        Ok(r)
    }
}
