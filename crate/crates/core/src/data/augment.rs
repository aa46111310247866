//! Image and feature-vector augmentations.
//!
//! Images are planar channel-major (`C × H × W`) with values in `[0, 1]`,
//! matching the CIFAR-100 layout.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageDims {
    pub const CIFAR: ImageDims = ImageDims {
        height: 32,
        width: 32,
        channels: 3,
    };

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn check(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.len() || self.is_empty() {
            return Err(Error::Contract(format!(
                "image of {} values does not match {}x{}x{}",
                features.len(),
                self.channels,
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// Strong-augmentation knobs; defaults follow the usual SimCLR/SupCon policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrongAugment {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub jitter_p: f64,
    pub grayscale_p: f64,
    pub blur_p: f64,
    pub blur_kernel: usize,
    pub blur_sigma: (f64, f64),
    pub solarize_p: f64,
    pub solarize_threshold: f64,
}

impl Default for StrongAugment {
    fn default() -> Self {
        Self {
            brightness: 0.8,
            contrast: 0.8,
            saturation: 0.8,
            hue: 0.2,
            jitter_p: 0.8,
            grayscale_p: 0.2,
            blur_p: 0.5,
            blur_kernel: 5,
            blur_sigma: (0.1, 2.0),
            solarize_p: 0.2,
            solarize_threshold: 128.0 / 255.0,
        }
    }
}

impl StrongAugment {
    /// Same magnitudes with every random stage switched off.
    pub fn disabled() -> Self {
        Self {
            jitter_p: 0.0,
            grayscale_p: 0.0,
            blur_p: 0.0,
            solarize_p: 0.0,
            ..Self::default()
        }
    }
}

/// How pretraining views are produced from a raw instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentPolicy {
    None,
    /// Additive isotropic Gaussian noise, for non-image feature vectors.
    FeatureNoise { sigma: f64 },
    Simple { dims: ImageDims },
    Strong { dims: ImageDims, params: StrongAugment },
}

impl AugmentPolicy {
    pub fn apply<R: Rng>(&self, features: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            AugmentPolicy::None => Ok(features.to_vec()),
            AugmentPolicy::FeatureNoise { sigma } => Ok(features
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v + sigma * z
                })
                .collect()),
            AugmentPolicy::Simple { dims } => augment_simple(features, *dims, rng),
            AugmentPolicy::Strong { dims, params } => augment_strong(features, *dims, params, rng),
        }
    }
}

/// Random resized crop (area scale in `[0.2, 1]`, aspect in `[3/4, 4/3]`) then a
/// horizontal flip with probability ½.
pub fn augment_simple<R: Rng>(features: &[f64], dims: ImageDims, rng: &mut R) -> Result<Vec<f64>> {
    dims.check(features)?;
    let (h, w) = (dims.height as f64, dims.width as f64);
    let scale = rng.random_range(0.2..=1.0);
    let log_ratio = rng.random_range((3.0f64 / 4.0).ln()..=(4.0f64 / 3.0).ln());
    let area = scale * h * w;
    let ratio = log_ratio.exp();
    let cw = ((area * ratio).sqrt().round() as usize).clamp(1, dims.width);
    let ch = ((area / ratio).sqrt().round() as usize).clamp(1, dims.height);
    let x0 = rng.random_range(0..=dims.width - cw);
    let y0 = rng.random_range(0..=dims.height - ch);
    let mut out = resize_crop(features, dims, (y0, x0, ch, cw));
    if rng.random_bool(0.5) {
        out = hflip(&out, dims);
    }
    Ok(out)
}

/// Bilinear resize of the `(top, left, height, width)` window back to full size.
pub fn resize_crop(img: &[f64], dims: ImageDims, (y0, x0, ch, cw): (usize, usize, usize, usize)) -> Vec<f64> {
    let (hh, ww) = (dims.height, dims.width);
    let mut out = vec![0.0; img.len()];
    let sample = |dst_len: usize, src_len: usize, i: usize| -> (usize, usize, f64) {
        let pos = ((i as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, pos - lo as f64)
    };
    for c in 0..dims.channels {
        let plane = &img[c * dims.plane()..(c + 1) * dims.plane()];
        let at = |y: usize, x: usize| plane[(y0 + y) * ww + x0 + x];
        for i in 0..hh {
            let (ya, yb, ty) = sample(hh, ch, i);
            for j in 0..ww {
                let (xa, xb, tx) = sample(ww, cw, j);
                let top = at(ya, xa) + tx * (at(ya, xb) - at(ya, xa));
                let bottom = at(yb, xa) + tx * (at(yb, xb) - at(yb, xa));
                out[c * dims.plane() + i * ww + j] = top + ty * (bottom - top);
            }
        }
    }
    out
}

pub fn hflip(img: &[f64], dims: ImageDims) -> Vec<f64> {
    let mut out = img.to_vec();
    for row in out.chunks_mut(dims.width) {
        row.reverse();
    }
    out
}

/// Simple augmentation followed by color jitter, grayscale, blur and solarization,
/// each applied with its own probability; output clamped to `[0, 1]`.
pub fn augment_strong<R: Rng>(
    features: &[f64],
    dims: ImageDims,
    params: &StrongAugment,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if dims.channels != 3 {
        return Err(Error::Contract(format!(
            "strong augmentation needs 3 channels, got {}",
            dims.channels
        )));
    }
    let mut img = augment_simple(features, dims, rng)?;
    if rng.random::<f64>() < params.jitter_p {
        color_jitter(&mut img, dims, params, rng);
    }
    if rng.random::<f64>() < params.grayscale_p {
        img = grayscale(&img, dims);
    }
    if rng.random::<f64>() < params.blur_p {
        let (lo, hi) = params.blur_sigma;
        let sigma = rng.random_range(lo..=hi);
        img = gaussian_blur(&img, dims, params.blur_kernel, sigma);
    }
    if rng.random::<f64>() < params.solarize_p {
        for v in &mut img {
            if *v >= params.solarize_threshold {
                *v = 1.0 - *v;
            }
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(img)
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn grayscale(img: &[f64], dims: ImageDims) -> Vec<f64> {
    let p = dims.plane();
    let mut out = vec![0.0; img.len()];
    for k in 0..p {
        let l = luma(img[k], img[p + k], img[2 * p + k]);
        out[k] = l;
        out[p + k] = l;
        out[2 * p + k] = l;
    }
    out
}

fn color_jitter<R: Rng>(img: &mut [f64], dims: ImageDims, params: &StrongAugment, rng: &mut R) {
    let factor = |rng: &mut R, s: f64| rng.random_range((1.0 - s).max(0.0)..=1.0 + s);
    let mut order = [0usize, 1, 2, 3];
    order.shuffle(rng);
    let p = dims.plane();
    for stage in order {
        match stage {
            0 => {
                let f = factor(rng, params.brightness);
                img.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
            }
            1 => {
                let f = factor(rng, params.contrast);
                let mean = (0..p)
                    .map(|k| luma(img[k], img[p + k], img[2 * p + k]))
                    .sum::<f64>()
                    / p as f64;
                img.iter_mut()
                    .for_each(|v| *v = (mean + f * (*v - mean)).clamp(0.0, 1.0));
            }
            2 => {
                let f = factor(rng, params.saturation);
                for k in 0..p {
                    let l = luma(img[k], img[p + k], img[2 * p + k]);
                    for c in 0..3 {
                        let v = &mut img[c * p + k];
                        *v = (l + f * (*v - l)).clamp(0.0, 1.0);
                    }
                }
            }
            _ => {
                let shift = rng.random_range(-params.hue..=params.hue);
                for k in 0..p {
                    let (h, s, v) = rgb_to_hsv(img[k], img[p + k], img[2 * p + k]);
                    let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
                    img[k] = r;
                    img[p + k] = g;
                    img[2 * p + k] = b;
                }
            }
        }
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &[f64], dims: ImageDims, kernel: usize, sigma: f64) -> Vec<f64> {
    let half = (kernel / 2) as isize;
    let mut weights: Vec<f64> = (-half..=half)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if n == 1 {
            return 0;
        }
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let (h, w) = (dims.height, dims.width);
    let mut tmp = vec![0.0; img.len()];
    let mut out = vec![0.0; img.len()];
    for c in 0..dims.channels {
        let base = c * dims.plane();
        for y in 0..h {
            for x in 0..w {
                tmp[base + y * w + x] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * img[base + y * w + reflect(x as isize + k as isize - half, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[base + y * w + x] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[base + reflect(y as isize + k as isize - half, h) * w + x])
                    .sum();
            }
        }
    }
    out
}
