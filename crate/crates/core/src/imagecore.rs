//! Image tensors, file I/O, reflection padding, patch extraction and
//! synthetic noise.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder, ImageError, ImageReader};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel-major, row-major float image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ShapeMismatch("image needs at least one channel".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFault(format!("image element {bad}")));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    /// Builds an image by evaluating `f(channel, row, col)` at every element.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Converts between grayscale and RGB: grayscale is replicated, RGB is
    /// averaged down to a single channel.
    pub fn to_channels(&self, channels: usize) -> Result<Self> {
        match (self.channels, channels) {
            (a, b) if a == b => Ok(self.clone()),
            (1, n) => {
                let mut data = Vec::with_capacity(n * self.data.len());
                for _ in 0..n {
                    data.extend_from_slice(&self.data);
                }
                Ok(Self { channels: n, height: self.height, width: self.width, data })
            }
            (n, 1) => {
                let plane = self.height * self.width;
                let mut data = vec![0.0f32; plane];
                for c in 0..n {
                    for (d, s) in data.iter_mut().zip(self.channel(c)) {
                        *d += s;
                    }
                }
                data.iter_mut().for_each(|v| *v /= n as f32);
                Ok(Self { channels: 1, height: self.height, width: self.width, data })
            }
            (a, b) => Err(Error::ShapeMismatch(format!("cannot convert {a} channels to {b}"))),
        }
    }

    /// Copies the `height`x`width` window whose top-left corner is (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {height}x{width}@({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    /// Concatenates images of equal channel count and height left to right.
    pub fn hstack(images: &[&ImageTensor]) -> Result<Self> {
        let first = images.first().ok_or(Error::EmptyInput)?;
        let (c, h) = (first.channels, first.height);
        if images.iter().any(|i| i.channels != c || i.height != h) {
            return Err(Error::ShapeMismatch("hstack needs equal channels and height".into()));
        }
        let width: usize = images.iter().map(|i| i.width).sum();
        let mut out = Self::zeros(c, h, width);
        let mut offset = 0;
        for img in images {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..img.width {
                        out.set(ch, y, offset + x, img.get(ch, y, x));
                    }
                }
            }
            offset += img.width;
        }
        Ok(out)
    }
}

/// Reads an 8-bit grayscale or RGB PNG, PGM (P5) or PPM (P6).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format().is_none() {
        return Err(Error::UnsupportedFormat(format!("{}: unrecognised format", path.display())));
    }
    let decoded = reader.decode().map_err(|e| match e {
        ImageError::Unsupported(u) => Error::UnsupportedFormat(format!("{}: {u}", path.display())),
        ImageError::IoError(io) => Error::CorruptData(format!("{}: {io}", path.display())),
        other => Error::CorruptData(format!("{}: {other}", path.display())),
    })?;
    let (channels, raw, width, height) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.as_raw().clone(), buf.width(), buf.height()),
        DynamicImage::ImageRgb8(buf) => (3, buf.as_raw().clone(), buf.width(), buf.height()),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: color type {:?} (expected 8-bit gray or RGB)",
                path.display(),
                other.color()
            )))
        }
    };
    let (height, width) = (height as usize, width as usize);
    // interleaved HWC bytes -> channel-major floats
    let mut data = vec![0.0f32; channels * height * width];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            data[c * height * width + i] = f32::from(b) / 255.0;
        }
    }
    ImageTensor::new(channels, height, width, data)
}

/// Quantizes one value to a byte: clamp to [0,1], then round half up.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes `img` as PNG (by `.png` extension) or binary PGM/PPM (`.pgm`/`.ppm`/`.pnm`).
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = (img.height, img.width, img.channels);
    let color = match c {
        1 => ColorType::L8,
        3 => ColorType::Rgb8,
        n => return Err(Error::UnsupportedFormat(format!("cannot save {n}-channel image"))),
    };
    let mut bytes = Vec::with_capacity(c * h * w);
    for i in 0..h * w {
        for ch in 0..c {
            bytes.push(quantize(img.data[ch * h * w + i]));
        }
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = BufWriter::new(file);
    let encode_err = |e: ImageError| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    };
    match ext.as_str() {
        "png" => image::codecs::png::PngEncoder::new(writer)
            .write_image(&bytes, w as u32, h as u32, ExtendedColorType::from(color))
            .map_err(encode_err),
        "pgm" | "ppm" | "pnm" => {
            let subtype = if c == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(writer)
                .with_subtype(subtype)
                .write_image(&bytes, w as u32, h as u32, ExtendedColorType::from(color))
                .map_err(encode_err)
        }
        other => Err(Error::UnsupportedFormat(format!("output extension {other:?}"))),
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Mirror padding on all four sides by `pad` pixels, edge pixel not repeated.
pub fn pad_reflect(img: &ImageTensor, pad: usize) -> Result<ImageTensor> {
    pad_reflect_edges(img, pad, pad, pad, pad)
}

/// Mirror padding with independent amounts per side.
pub fn pad_reflect_edges(
    img: &ImageTensor,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> Result<ImageTensor> {
    let (c, h, w) = img.shape();
    if top.max(bottom) >= h || left.max(right) >= w {
        return Err(Error::PadTooLarge { pad: top.max(bottom).max(left).max(right), height: h, width: w });
    }
    let (oh, ow) = (h + top + bottom, w + left + right);
    Ok(ImageTensor::from_fn(c, oh, ow, |ch, y, x| {
        let sy = reflect(y as isize - top as isize, h);
        let sx = reflect(x as isize - left as isize, w);
        img.get(ch, sy, sx)
    }))
}

/// Synthetic degradation applied by [`add_noise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    StampOverlay,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Gaussian standard deviation on the [0,1] intensity scale.
    pub sigma: f32,
    #[serde(default)]
    pub stamp_count: usize,
    pub seed: u64,
    #[serde(default = "default_stamp_alpha")]
    pub stamp_alpha: f32,
}

fn default_stamp_alpha() -> f32 {
    0.6
}

impl NoiseSpec {
    pub fn gaussian(sigma: f32, seed: u64) -> Self {
        Self { kind: NoiseKind::Gaussian, sigma, stamp_count: 0, seed, stamp_alpha: default_stamp_alpha() }
    }

    pub fn stamps(stamp_count: usize, seed: u64) -> Self {
        Self {
            kind: NoiseKind::StampOverlay,
            sigma: 0.0,
            stamp_count,
            seed,
            stamp_alpha: default_stamp_alpha(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::ConfigInvalid(format!("noise sigma {} must be >= 0", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.stamp_alpha) {
            return Err(Error::ConfigInvalid("stamp alpha must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// Draws `len` i.i.d. N(0, sigma²) samples.
pub fn noise_field(len: usize, sigma: f32, rng: &mut impl Rng) -> Vec<f32> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let normal = Normal::new(0.0f32, sigma).expect("sigma validated non-negative and finite");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Returns a degraded copy of `img`. A pure function of `(img, spec)`.
pub fn add_noise(img: &ImageTensor, spec: &NoiseSpec) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = img.clone();
    if matches!(spec.kind, NoiseKind::StampOverlay | NoiseKind::Composite) {
        for _ in 0..spec.stamp_count {
            overlay_stamp(&mut out, spec.stamp_alpha, &mut rng);
        }
    }
    if matches!(spec.kind, NoiseKind::Gaussian | NoiseKind::Composite) && spec.sigma > 0.0 {
        let field = noise_field(out.data.len(), spec.sigma, &mut rng);
        for (v, n) in out.data.iter_mut().zip(field) {
            *v += n;
        }
    }
    out.clamped()
}

/// Alpha-composites one elliptical ring stroke, emulating an ink seal.
fn overlay_stamp(img: &mut ImageTensor, alpha: f32, rng: &mut impl Rng) {
    let (c, h, w) = img.shape();
    let side = h.min(w) as f32;
    let cy = rng.random_range(0.0..h as f32);
    let cx = rng.random_range(0.0..w as f32);
    let ry = rng.random_range(0.15..0.35) * side;
    let rx = rng.random_range(0.15..0.35) * side;
    let theta = rng.random_range(0.0..std::f32::consts::PI);
    let half_stroke = (0.03 * side).max(0.75);
    let (sin, cos) = theta.sin_cos();
    let color: Vec<f32> = if c == 3 { vec![0.85, 0.15, 0.15] } else { vec![0.3; c] };
    for y in 0..h {
        for x in 0..w {
            let dy = y as f32 + 0.5 - cy;
            let dx = x as f32 + 0.5 - cx;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let r = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
            // radial distance to the ring in pixels
            if ((r - 1.0) * rx.min(ry)).abs() <= half_stroke {
                for (ch, &ink) in color.iter().enumerate() {
                    let old = img.get(ch, y, x);
                    img.set(ch, y, x, (1.0 - alpha) * old + alpha * ink);
                }
            }
        }
    }
}

/// Number of `size`-wide windows along an axis of length `extent`.
pub fn patch_grid_count(extent: usize, size: usize, stride: usize) -> usize {
    if size > extent || stride == 0 {
        0
    } else {
        (extent - size) / stride + 1
    }
}

/// All `size`x`size` windows on a `stride` grid, in a seed-shuffled order.
pub fn extract_patches(
    img: &ImageTensor,
    size: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    let (_, h, w) = img.shape();
    if size == 0 || size > h.min(w) {
        return Err(Error::PatchTooLarge { size, height: h, width: w });
    }
    if stride == 0 {
        return Err(Error::ConfigInvalid("patch stride must be >= 1".into()));
    }
    let mut corners: Vec<(usize, usize)> = (0..patch_grid_count(h, size, stride))
        .flat_map(|i| (0..patch_grid_count(w, size, stride)).map(move |j| (i * stride, j * stride)))
        .collect();
    corners.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    corners.into_iter().map(|(y, x)| img.crop(y, x, size, size)).collect()
}
