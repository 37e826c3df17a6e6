//! Image tensor and the preparation/augmentation operators.
//!
//! Images are H x W x 3 interleaved `f64` tensors with unit-interval values
//! before normalization. Resampling is bilinear with half-pixel centers;
//! rotation samples with reflection padding. Every augmentation draw comes
//! from the caller's [`Rng`](crate::rng::Rng), and sub-transforms whose drawn
//! parameter is the identity are skipped outright so an all-zero
//! configuration reproduces the input bit for bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Per-channel ImageNet mean used by z-score normalization.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// Per-channel ImageNet standard deviation used by z-score normalization.
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// H x W x 3 image with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        ImageTensor {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn constant(height: usize, width: usize, value: [f64; 3]) -> Self {
        let mut img = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                img.set(y, x, value);
            }
        }
        img
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: [f64; 3]) {
        let base = (y * self.width + x) * 3;
        self.data[base] = value[0];
        self.data[base + 1] = value[1];
        self.data[base + 2] = value[2];
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let base = (y * self.width + x) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Mirror across the vertical axis (reverse columns).
pub fn mirror_horizontal(img: &ImageTensor) -> ImageTensor {
    let mut out = ImageTensor::zeros(img.height, img.width);
    for y in 0..img.height {
        for x in 0..img.width {
            out.set(y, x, img.pixel(y, img.width - 1 - x));
        }
    }
    out
}

/// Flip top-to-bottom (reverse rows).
pub fn flip_vertical(img: &ImageTensor) -> ImageTensor {
    let mut out = ImageTensor::zeros(img.height, img.width);
    for y in 0..img.height {
        for x in 0..img.width {
            out.set(y, x, img.pixel(img.height - 1 - y, x));
        }
    }
    out
}

/// Bilinear resize to `target x target` with half-pixel centers.
///
/// Integer-aligned source coordinates short-circuit to a direct copy, so a
/// same-size resize is bit-identical to its input.
pub fn prepare_image(img: &ImageTensor, target_size: usize) -> Result<ImageTensor> {
    if target_size == 0 {
        return Err(Error::Argument("target size must be positive".into()));
    }
    let (h, w) = (img.height, img.width);
    let mut out = ImageTensor::zeros(target_size, target_size);
    let scale_y = h as f64 / target_size as f64;
    let scale_x = w as f64 / target_size as f64;
    for oy in 0..target_size {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        let (y0, fy) = split_coord(sy, h);
        for ox in 0..target_size {
            let sx = (ox as f64 + 0.5) * scale_x - 0.5;
            let (x0, fx) = split_coord(sx, w);
            let mut px = [0.0; 3];
            for (c, v) in px.iter_mut().enumerate() {
                *v = bilinear_at(img, y0, x0, fy, fx, c);
            }
            out.set(oy, ox, px);
        }
    }
    Ok(out)
}

/// Clamp a sampling coordinate and split into base index and fraction.
#[inline]
fn split_coord(s: f64, n: usize) -> (usize, f64) {
    let s = s.clamp(0.0, (n - 1) as f64);
    let base = libm::floor(s) as usize;
    (base, s - base as f64)
}

#[inline]
fn bilinear_at(img: &ImageTensor, y0: usize, x0: usize, fy: f64, fx: f64, c: usize) -> f64 {
    if fy == 0.0 && fx == 0.0 {
        return img.get(y0, x0, c);
    }
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    if fy == 0.0 {
        return img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
    }
    if fx == 0.0 {
        return img.get(y0, x0, c) * (1.0 - fy) + img.get(y1, x0, c) * fy;
    }
    let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
    let bot = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Reflect an out-of-range index into `0..n` without repeating the edge.
#[inline]
fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i % period;
    if j < 0 {
        j += period;
    }
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Rotate about the image center by `degrees`, bilinear with reflection
/// padding. Exact zero rotation returns a copy.
pub fn rotate(img: &ImageTensor, degrees: f64) -> ImageTensor {
    if degrees == 0.0 {
        return img.clone();
    }
    let theta = degrees * core::f64::consts::PI / 180.0;
    let (cos_t, sin_t) = (libm::cos(theta), libm::sin(theta));
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let mut out = ImageTensor::zeros(img.height, img.width);
    for oy in 0..img.height {
        for ox in 0..img.width {
            // inverse rotation of the output coordinate
            let dy = oy as f64 - cy;
            let dx = ox as f64 - cx;
            let sy = cy + dy * cos_t - dx * sin_t;
            let sx = cx + dy * sin_t + dx * cos_t;
            let y0 = libm::floor(sy);
            let x0 = libm::floor(sx);
            let fy = sy - y0;
            let fx = sx - x0;
            let y0 = y0 as i64;
            let x0 = x0 as i64;
            let mut px = [0.0; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let p00 = img.get(reflect_index(y0, img.height), reflect_index(x0, img.width), c);
                let p01 =
                    img.get(reflect_index(y0, img.height), reflect_index(x0 + 1, img.width), c);
                let p10 =
                    img.get(reflect_index(y0 + 1, img.height), reflect_index(x0, img.width), c);
                let p11 = img.get(
                    reflect_index(y0 + 1, img.height),
                    reflect_index(x0 + 1, img.width),
                    c,
                );
                *v = (p00 * (1.0 - fx) + p01 * fx) * (1.0 - fy) + (p10 * (1.0 - fx) + p11 * fx) * fy;
            }
            out.set(oy, ox, px);
        }
    }
    out
}

/// Normalized 5x5 Gaussian kernel for the given sigma.
fn gaussian_kernel5(sigma: f64) -> [[f64; 5]; 5] {
    let mut k = [[0.0; 5]; 5];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let dy = i as f64 - 2.0;
            let dx = j as f64 - 2.0;
            *v = libm::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            sum += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

/// 5x5 Gaussian blur with reflection padding.
pub fn gaussian_blur5(img: &ImageTensor, sigma: f64) -> ImageTensor {
    let k = gaussian_kernel5(sigma);
    let mut out = ImageTensor::zeros(img.height, img.width);
    for oy in 0..img.height {
        for ox in 0..img.width {
            let mut px = [0.0; 3];
            for (i, row) in k.iter().enumerate() {
                let sy = reflect_index(oy as i64 + i as i64 - 2, img.height);
                for (j, &kv) in row.iter().enumerate() {
                    let sx = reflect_index(ox as i64 + j as i64 - 2, img.width);
                    for (c, v) in px.iter_mut().enumerate() {
                        *v += kv * img.get(sy, sx, c);
                    }
                }
            }
            out.set(oy, ox, px);
        }
    }
    out
}

/// Z-score normalize per channel with the ImageNet statistics.
pub fn normalize_zscore(img: &ImageTensor) -> ImageTensor {
    let mut out = img.clone();
    for px in out.data.chunks_mut(3) {
        for c in 0..3 {
            px[c] = (px[c] - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    out
}

/// Online augmentation parameters.
///
/// Each field bounds one random transform; a zero bound (or zero
/// probability) disables the transform entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Maximum absolute rotation in degrees; the angle is uniform in +/- this.
    pub rotation_degrees: f64,
    pub vertical_flip_prob: f64,
    pub blur_prob: f64,
    /// Blur sigma drawn uniformly from this open interval.
    pub blur_sigma: (f64, f64),
    /// Brightness factor drawn from `1 +/- brightness`.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift as a fraction of the color wheel, drawn from `+/- hue`.
    pub hue: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_degrees: 20.0,
            vertical_flip_prob: 0.5,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.05,
        }
    }
}

impl AugmentConfig {
    /// Configuration under which `augment` is the identity map.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_degrees: 0.0,
            vertical_flip_prob: 0.0,
            blur_prob: 0.0,
            blur_sigma: (0.1, 2.0),
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
        }
    }
}

fn luma(px: [f64; 3]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn rgb_to_hsv(px: [f64; 3]) -> (f64, f64, f64) {
    let max = px[0].max(px[1]).max(px[2]);
    let min = px[0].min(px[1]).min(px[2]);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == px[0] {
        (((px[1] - px[2]) / delta) % 6.0) / 6.0
    } else if max == px[1] {
        ((px[2] - px[0]) / delta + 2.0) / 6.0
    } else {
        ((px[0] - px[1]) / delta + 4.0) / 6.0
    };
    let h = if h < 0.0 { h + 1.0 } else { h };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let i = libm::floor(h6) as i64 % 6;
    let f = h6 - libm::floor(h6);
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Apply the random augmentation pipeline: rotation, vertical flip, Gaussian
/// blur, then brightness/contrast/saturation/hue jitter. Deterministic given
/// the generator state; identity parameters skip their transform bit-exactly.
pub fn augment(img: &ImageTensor, rng: &mut Rng, config: &AugmentConfig) -> ImageTensor {
    let mut out = img.clone();

    let angle = rng.uniform(-config.rotation_degrees, config.rotation_degrees);
    if angle != 0.0 {
        out = rotate(&out, angle);
    }

    if rng.next_f64() < config.vertical_flip_prob {
        out = flip_vertical(&out);
    }

    if rng.next_f64() < config.blur_prob {
        let sigma = rng.uniform(config.blur_sigma.0, config.blur_sigma.1);
        out = gaussian_blur5(&out, sigma);
    }

    let b = 1.0 + rng.uniform(-config.brightness, config.brightness);
    if b != 1.0 {
        for v in out.data.iter_mut() {
            *v = clamp01(*v * b);
        }
    }

    let c = 1.0 + rng.uniform(-config.contrast, config.contrast);
    if c != 1.0 {
        let n = (out.height * out.width) as f64;
        let mean: f64 = out.data.chunks(3).map(|px| luma([px[0], px[1], px[2]])).sum::<f64>() / n;
        for v in out.data.iter_mut() {
            *v = clamp01((*v - mean) * c + mean);
        }
    }

    let s = 1.0 + rng.uniform(-config.saturation, config.saturation);
    if s != 1.0 {
        for px in out.data.chunks_mut(3) {
            let l = luma([px[0], px[1], px[2]]);
            for v in px.iter_mut() {
                *v = clamp01(l + (*v - l) * s);
            }
        }
    }

    let h_shift = rng.uniform(-config.hue, config.hue);
    if h_shift != 0.0 {
        for px in out.data.chunks_mut(3) {
            let (h, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
            let mut h = h + h_shift;
            if h < 0.0 {
                h += 1.0;
            } else if h >= 1.0 {
                h -= 1.0;
            }
            let rgb = hsv_to_rgb(h, s, v);
            px[0] = clamp01(rgb[0]);
            px[1] = clamp01(rgb[1]);
            px[2] = clamp01(rgb[2]);
        }
    }

    out
}
