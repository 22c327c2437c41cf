//! Image tensors and 8-bit PNG interchange.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

/// BT.601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Error, Debug)]
pub enum ImageError {
    #[error("image file not found: {0}")]
    NotFound(String),
    #[error("malformed image {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("unsupported bit depth {bits} in {path} (only 8-bit images are supported)")]
    UnsupportedBitDepth { path: String, bits: u8 },
    #[error("unsupported color type {color} in {path} (only grayscale and RGB are supported)")]
    UnsupportedColor { path: String, color: String },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid image shape {height}x{width}x{channels} for {len} values")]
    Shape {
        height: usize,
        width: usize,
        channels: usize,
        len: usize,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// An `height x width x channels` image stored row-major in `(h, w, c)` order.
///
/// Decoded and encoded images hold intensities in `[0, 1]`; the same layout is
/// reused for per-pixel gradients, which are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) || data.len() != height * width * channels {
            return Err(ImageError::Shape {
                height,
                width,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels]).expect("valid image shape")
    }

    pub fn zeros_like(other: &ImageTensor) -> Self {
        Self::filled(other.height, other.width, other.channels, 0.0)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Checks that every element is finite and inside `[0, 1]`.
    pub fn check_unit_range(&self) -> Result<(), ImageError> {
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(index) => Err(ImageError::OutOfRange {
                index,
                value: self.data[index],
            }),
            None => Ok(()),
        }
    }

    /// Row-major luminance plane. Single-channel images are returned as-is.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect()
    }

    /// Per-channel means in channel order.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = (self.height * self.width) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    /// Elementwise map producing a new image of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rounds every element through the 8-bit PNG quantizer.
    pub fn quantized(&self) -> ImageTensor {
        self.map(|v| quantize(v) as f64 / 255.0)
    }
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Decodes an 8-bit grayscale or RGB PNG into `[0, 1]` intensities (`v / 255`).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor, ImageError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImageError::NotFound(shown.clone()),
        _ => ImageError::Malformed {
            path: shown.clone(),
            reason: e.to_string(),
        },
    })?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| ImageError::Malformed {
        path: shown.clone(),
        reason: e.to_string(),
    })?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedBitDepth {
            path: shown,
            bits: depth as u8,
        });
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(ImageError::UnsupportedColor {
                path: shown,
                color: format!("{other:?}"),
            })
        }
    };
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| ImageError::Malformed {
        path: shown.clone(),
        reason: e.to_string(),
    })?;
    let (width, height) = (info.width as usize, info.height as usize);
    let row_len = width * channels;
    let mut data = Vec::with_capacity(height * row_len);
    for row in buf.chunks(info.line_size).take(height) {
        data.extend(row[..row_len].iter().map(|&b| b as f64 / 255.0));
    }
    ImageTensor::new(height, width, channels, data).map_err(|_| ImageError::Malformed {
        path: shown,
        reason: "pixel buffer does not match header".into(),
    })
}

/// Encodes the image as an 8-bit PNG using `round(v * 255)`.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<(), ImageError> {
    img.check_unit_range()?;
    let bytes = encode_png(img);
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|source| ImageError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// PNG bytes for an image already known to be in range.
pub fn encode_png(img: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(BufWriter::new(&mut out), img.width as u32, img.height as u32);
        encoder.set_color(if img.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory PNG header");
        let pixels: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
        writer.write_image_data(&pixels).expect("in-memory PNG data");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_raw_png(path: &Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) {
        let file = File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        enc.write_header().unwrap().write_image_data(data).unwrap();
    }

    #[test]
    fn white_png_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        write_raw_png(&p, 2, 2, png::ColorType::Rgb, png::BitDepth::Eight, &[255; 12]);
        let img = load_image(&p).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (2, 2, 3));
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn black_and_mixed_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.png");
        write_raw_png(&p, 1, 1, png::ColorType::Rgb, png::BitDepth::Eight, &[0, 0, 0]);
        assert_eq!(load_image(&p).unwrap().data(), &[0.0, 0.0, 0.0]);

        write_raw_png(&p, 1, 1, png::ColorType::Rgb, png::BitDepth::Eight, &[128, 64, 0]);
        let img = load_image(&p).unwrap();
        assert!((img.data()[0] - 0.501_960_784_313_725_5).abs() < 1e-15);
        assert!((img.data()[1] - 0.250_980_392_156_862_75).abs() < 1e-15);
        assert_eq!(img.data()[2], 0.0);
    }

    #[test]
    fn grayscale_keeps_one_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_raw_png(&p, 3, 1, png::ColorType::Grayscale, png::BitDepth::Eight, &[0, 51, 255]);
        let img = load_image(&p).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0.0, 0.2, 1.0]);
    }

    #[test]
    fn load_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_image(dir.path().join("nope.png")), Err(ImageError::NotFound(_))));

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"definitely not a png").unwrap();
        assert!(matches!(load_image(&junk), Err(ImageError::Malformed { .. })));

        let deep = dir.path().join("deep.png");
        write_raw_png(&deep, 1, 1, png::ColorType::Rgb, png::BitDepth::Sixteen, &[0; 6]);
        assert!(matches!(load_image(&deep), Err(ImageError::UnsupportedBitDepth { bits: 16, .. })));

        let rgba = dir.path().join("rgba.png");
        write_raw_png(&rgba, 1, 1, png::ColorType::Rgba, png::BitDepth::Eight, &[0; 4]);
        assert!(matches!(load_image(&rgba), Err(ImageError::UnsupportedColor { .. })));
    }

    #[test]
    fn save_quantizes_and_rejects_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.png");
        save_image(&ImageTensor::filled(2, 3, 3, 0.5), &p).unwrap();
        let back = load_image(&p).unwrap();
        assert!(back.data().iter().all(|&v| v == 128.0 / 255.0));

        save_image(&ImageTensor::filled(2, 2, 1, 1.0), &p).unwrap();
        assert!(load_image(&p).unwrap().data().iter().all(|&v| v == 1.0));

        let mut bad = ImageTensor::filled(1, 1, 3, 0.0);
        bad.data_mut()[1] = 1.2;
        assert!(matches!(save_image(&bad, &p), Err(ImageError::OutOfRange { index: 1, .. })));
    }

    #[test]
    fn unwritable_path_is_reported() {
        let err = save_image(&ImageTensor::filled(1, 1, 1, 0.0), "/nonexistent-dir/x.png").unwrap_err();
        assert!(matches!(err, ImageError::Write { .. }));
    }

    #[test]
    fn luma_uses_bt601() {
        let img = ImageTensor::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(img.luma(), vec![0.299]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn png_round_trip_within_half_step(h in 1usize..6, w in 1usize..6, gray in any::<bool>(), seed in any::<u64>()) {
            let c = if gray { 1 } else { 3 };
            let mut rng = crate::rng::SeededRng::new(seed);
            let img = ImageTensor::new(h, w, c, (0..h * w * c).map(|_| rng.uniform()).collect()).unwrap();
            let back = load_image_from_bytes(&encode_png(&img));
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }
    }

    fn load_image_from_bytes(bytes: &[u8]) -> ImageTensor {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        std::fs::write(&p, bytes).unwrap();
        load_image(&p).unwrap()
    }
}
