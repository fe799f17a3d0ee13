//! Label-preserving input perturbations: patch substitution, additive white
//! Gaussian noise, Gaussian blur, pixelation, and block-DCT quantization (the
//! stand-in for JPEG compression artifacts, which quantizes 8x8 DCT blocks
//! without an entropy coder).
//!
//! Each example is perturbed with a configured probability; when it is, one
//! of the five kinds is drawn uniformly. Everything is deterministic given
//! the perturbation RNG stream.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::DetRng;

const DCT_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    PatchSubstitution,
    GaussianNoise,
    GaussianBlur,
    Pixelation,
    BlockDctQuantization,
}

pub const ALL_KINDS: [PerturbKind; 5] = [
    PerturbKind::PatchSubstitution,
    PerturbKind::GaussianNoise,
    PerturbKind::GaussianBlur,
    PerturbKind::Pixelation,
    PerturbKind::BlockDctQuantization,
];

/// Perturbation strengths. The defaults are mild enough to preserve labels;
/// validation caps them so configs cannot push past that regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    /// Probability that an example is perturbed at all.
    #[serde(default = "default_probability")]
    pub probability: f64,
    /// Patch side (images) or segment length (features) as a fraction of the
    /// input extent.
    #[serde(default = "default_patch_fraction")]
    pub patch_fraction: f64,
    /// Noise sigma, in input units (feature scale or 8-bit levels).
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    /// Blur sigma in samples/pixels.
    #[serde(default = "default_blur_sigma")]
    pub blur_sigma: f64,
    /// Downsampling factor; 1 disables.
    #[serde(default = "default_pixelation_factor")]
    pub pixelation_factor: usize,
    /// DCT coefficient quantization step, in input units.
    #[serde(default = "default_dct_step")]
    pub dct_step: f64,
}

fn default_probability() -> f64 {
    0.3
}
fn default_patch_fraction() -> f64 {
    0.125
}
fn default_noise_sigma() -> f64 {
    0.05
}
fn default_blur_sigma() -> f64 {
    1.0
}
fn default_pixelation_factor() -> usize {
    2
}
fn default_dct_step() -> f64 {
    0.1
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            probability: default_probability(),
            patch_fraction: default_patch_fraction(),
            noise_sigma: default_noise_sigma(),
            blur_sigma: default_blur_sigma(),
            pixelation_factor: default_pixelation_factor(),
            dct_step: default_dct_step(),
        }
    }
}

impl PerturbConfig {
    /// Defaults rescaled for 8-bit image data.
    pub fn image_defaults() -> Self {
        PerturbConfig {
            noise_sigma: 4.0,
            dct_step: 16.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "perturbation probability must lie in [0, 1], got {}",
                self.probability
            )));
        }
        if !(0.0..=0.5).contains(&self.patch_fraction) {
            return Err(Error::Config(
                "patch fraction must lie in [0, 0.5] to stay label-preserving".into(),
            ));
        }
        if self.noise_sigma < 0.0 || self.blur_sigma < 0.0 || self.dct_step < 0.0 {
            return Err(Error::Config(
                "perturbation strengths must be nonnegative".into(),
            ));
        }
        if self.blur_sigma > 8.0 {
            return Err(Error::Config("blur sigma capped at 8".into()));
        }
        if self.pixelation_factor == 0 || self.pixelation_factor > 16 {
            return Err(Error::Config("pixelation factor must lie in [1, 16]".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    kernel
}

/// Orthonormal DCT-II of a block (forward when `inverse` is false).
fn dct_1d(block: &[f64], inverse: bool) -> Vec<f64> {
    let n = block.len();
    let mut out = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        for (j, &x) in block.iter().enumerate() {
            let angle = |freq: usize, idx: usize| {
                std::f64::consts::PI * (idx as f64 + 0.5) * freq as f64 / n as f64
            };
            let a = |freq: usize| {
                if freq == 0 {
                    (1.0 / n as f64).sqrt()
                } else {
                    (2.0 / n as f64).sqrt()
                }
            };
            acc += if inverse {
                a(j) * x * angle(j, k).cos()
            } else {
                a(k) * x * angle(k, j).cos()
            };
        }
        out[k] = acc;
    }
    out
}

fn quantize_block(block: &mut [f64], step: f64) {
    let coeffs = dct_1d(block, false);
    let quantized: Vec<f64> = coeffs.iter().map(|&c| (c / step).round() * step).collect();
    block.copy_from_slice(&dct_1d(&quantized, true));
}

// ---------------------------------------------------------------------------
// Feature-vector track
// ---------------------------------------------------------------------------

pub fn perturb_features(
    x: &[f64],
    kind: PerturbKind,
    config: &PerturbConfig,
    rng: &mut DetRng,
) -> Vec<f64> {
    let mut out = x.to_vec();
    match kind {
        PerturbKind::PatchSubstitution => {
            let len = (config.patch_fraction * x.len() as f64).round() as usize;
            if len == 0 || len >= x.len() {
                return out;
            }
            let src = rng.random_range(0..=x.len() - len);
            let dst = rng.random_range(0..=x.len() - len);
            let patch = x[src..src + len].to_vec();
            out[dst..dst + len].copy_from_slice(&patch);
        }
        PerturbKind::GaussianNoise => {
            if config.noise_sigma == 0.0 {
                return out;
            }
            for v in &mut out {
                *v += config.noise_sigma * crate::rng::normal::<f64>(rng);
            }
        }
        PerturbKind::GaussianBlur => {
            if config.blur_sigma == 0.0 {
                return out;
            }
            let kernel = gaussian_kernel(config.blur_sigma);
            let radius = kernel.len() as i64 / 2;
            for (i, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    // clamp-to-edge keeps totals stable at the borders
                    let j = (i as i64 + k as i64 - radius).clamp(0, x.len() as i64 - 1);
                    acc += w * x[j as usize];
                }
                *slot = acc;
            }
        }
        PerturbKind::Pixelation => {
            let f = config.pixelation_factor;
            if f <= 1 {
                return out;
            }
            for chunk in out.chunks_mut(f) {
                let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
                chunk.fill(mean);
            }
        }
        PerturbKind::BlockDctQuantization => {
            if config.dct_step == 0.0 {
                return out;
            }
            let full = x.len() / DCT_BLOCK * DCT_BLOCK;
            for block in out[..full].chunks_mut(DCT_BLOCK) {
                quantize_block(block, config.dct_step);
            }
        }
    }
    out
}

/// Applies one uniformly chosen perturbation with the configured probability;
/// otherwise returns the input unchanged.
pub fn maybe_perturb_features(x: &[f64], config: &PerturbConfig, rng: &mut DetRng) -> Vec<f64> {
    if config.probability == 0.0 {
        return x.to_vec();
    }
    if rng.random::<f64>() >= config.probability {
        return x.to_vec();
    }
    let kind = ALL_KINDS[rng.random_range(0..ALL_KINDS.len())];
    perturb_features(x, kind, config, rng)
}

// ---------------------------------------------------------------------------
// Image track
// ---------------------------------------------------------------------------

fn image_channels(img: &Image) -> [Vec<f64>; 3] {
    let mut channels = [
        Vec::with_capacity(img.width * img.height),
        Vec::with_capacity(img.width * img.height),
        Vec::with_capacity(img.width * img.height),
    ];
    for px in img.data.chunks(3) {
        for c in 0..3 {
            channels[c].push(px[c] as f64);
        }
    }
    channels
}

fn channels_to_image(width: usize, height: usize, channels: &[Vec<f64>; 3]) -> Image {
    let mut img = Image::new(width, height);
    for i in 0..width * height {
        for c in 0..3 {
            img.data[i * 3 + c] = channels[c][i].round().clamp(0.0, 255.0) as u8;
        }
    }
    img
}

pub fn perturb_image(
    img: &Image,
    kind: PerturbKind,
    config: &PerturbConfig,
    rng: &mut DetRng,
) -> Image {
    let (w, h) = (img.width, img.height);
    match kind {
        PerturbKind::PatchSubstitution => {
            let side = (config.patch_fraction * w.min(h) as f64).round() as usize;
            if side == 0 || side >= w || side >= h {
                return img.clone();
            }
            let sx = rng.random_range(0..=w - side);
            let sy = rng.random_range(0..=h - side);
            let dx = rng.random_range(0..=w - side);
            let dy = rng.random_range(0..=h - side);
            let mut out = img.clone();
            for y in 0..side {
                for x in 0..side {
                    out.set_pixel(dx + x, dy + y, img.pixel(sx + x, sy + y));
                }
            }
            out
        }
        PerturbKind::GaussianNoise => {
            if config.noise_sigma == 0.0 {
                return img.clone();
            }
            let mut out = img.clone();
            for b in &mut out.data {
                let noisy = *b as f64 + config.noise_sigma * crate::rng::normal::<f64>(rng);
                *b = noisy.round().clamp(0.0, 255.0) as u8;
            }
            out
        }
        PerturbKind::GaussianBlur => {
            if config.blur_sigma == 0.0 {
                return img.clone();
            }
            let kernel = gaussian_kernel(config.blur_sigma);
            let radius = kernel.len() as i64 / 2;
            let channels = image_channels(img);
            let mut blurred = channels.clone();
            // horizontal then vertical, clamp-to-edge
            for c in 0..3 {
                let mut tmp = vec![0.0; w * h];
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0;
                        for (k, &wgt) in kernel.iter().enumerate() {
                            let j = (x as i64 + k as i64 - radius).clamp(0, w as i64 - 1);
                            acc += wgt * channels[c][y * w + j as usize];
                        }
                        tmp[y * w + x] = acc;
                    }
                }
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0;
                        for (k, &wgt) in kernel.iter().enumerate() {
                            let j = (y as i64 + k as i64 - radius).clamp(0, h as i64 - 1);
                            acc += wgt * tmp[j as usize * w + x];
                        }
                        blurred[c][y * w + x] = acc;
                    }
                }
            }
            channels_to_image(w, h, &blurred)
        }
        PerturbKind::Pixelation => {
            let f = config.pixelation_factor;
            if f <= 1 {
                return img.clone();
            }
            let mut out = img.clone();
            for by in (0..h).step_by(f) {
                for bx in (0..w).step_by(f) {
                    let y_end = (by + f).min(h);
                    let x_end = (bx + f).min(w);
                    let count = ((y_end - by) * (x_end - bx)) as f64;
                    let mut sums = [0.0f64; 3];
                    for y in by..y_end {
                        for x in bx..x_end {
                            let px = img.pixel(x, y);
                            for c in 0..3 {
                                sums[c] += px[c] as f64;
                            }
                        }
                    }
                    let mean = [
                        (sums[0] / count).round().clamp(0.0, 255.0) as u8,
                        (sums[1] / count).round().clamp(0.0, 255.0) as u8,
                        (sums[2] / count).round().clamp(0.0, 255.0) as u8,
                    ];
                    for y in by..y_end {
                        for x in bx..x_end {
                            out.set_pixel(x, y, mean);
                        }
                    }
                }
            }
            out
        }
        PerturbKind::BlockDctQuantization => {
            if config.dct_step == 0.0 {
                return img.clone();
            }
            let mut channels = image_channels(img);
            for channel in &mut channels {
                for by in (0..h / DCT_BLOCK * DCT_BLOCK).step_by(DCT_BLOCK) {
                    for bx in (0..w / DCT_BLOCK * DCT_BLOCK).step_by(DCT_BLOCK) {
                        // 2-D DCT: rows, then columns.
                        let mut block = [[0.0f64; DCT_BLOCK]; DCT_BLOCK];
                        for (r, row) in block.iter_mut().enumerate() {
                            for (cidx, slot) in row.iter_mut().enumerate() {
                                *slot = channel[(by + r) * w + bx + cidx];
                            }
                        }
                        let mut rowpass = [[0.0f64; DCT_BLOCK]; DCT_BLOCK];
                        for r in 0..DCT_BLOCK {
                            let t = dct_1d(&block[r], false);
                            rowpass[r].copy_from_slice(&t);
                        }
                        let mut coeffs = [[0.0f64; DCT_BLOCK]; DCT_BLOCK];
                        for cidx in 0..DCT_BLOCK {
                            let col: Vec<f64> = (0..DCT_BLOCK).map(|r| rowpass[r][cidx]).collect();
                            let t = dct_1d(&col, false);
                            for r in 0..DCT_BLOCK {
                                coeffs[r][cidx] = (t[r] / config.dct_step).round() * config.dct_step;
                            }
                        }
                        for cidx in 0..DCT_BLOCK {
                            let col: Vec<f64> = (0..DCT_BLOCK).map(|r| coeffs[r][cidx]).collect();
                            let t = dct_1d(&col, true);
                            for r in 0..DCT_BLOCK {
                                rowpass[r][cidx] = t[r];
                            }
                        }
                        for r in 0..DCT_BLOCK {
                            let t = dct_1d(&rowpass[r], true);
                            for cidx in 0..DCT_BLOCK {
                                channel[(by + r) * w + bx + cidx] = t[cidx];
                            }
                        }
                    }
                }
            }
            channels_to_image(w, h, &channels)
        }
    }
}

pub fn maybe_perturb_image(img: &Image, config: &PerturbConfig, rng: &mut DetRng) -> Image {
    if config.probability == 0.0 {
        return img.clone();
    }
    if rng.random::<f64>() >= config.probability {
        return img.clone();
    }
    let kind = ALL_KINDS[rng.random_range(0..ALL_KINDS.len())];
    perturb_image(img, kind, config, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    fn test_features() -> Vec<f64> {
        (0..24).map(|i| (i as f64 * 0.7).sin()).collect()
    }

    fn test_image() -> Image {
        let mut img = Image::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                img.set_pixel(x, y, [(x * 16) as u8, (y * 16) as u8, ((x + y) * 8) as u8]);
            }
        }
        img
    }

    #[test]
    fn probability_zero_is_bitwise_identity() {
        let cfg = PerturbConfig {
            probability: 0.0,
            ..Default::default()
        };
        let mut streams = RngStreams::from_seed(1);
        let x = test_features();
        assert_eq!(maybe_perturb_features(&x, &cfg, &mut streams.perturb), x);
        let img = test_image();
        assert_eq!(maybe_perturb_image(&img, &cfg, &mut streams.perturb), img);
    }

    #[test]
    fn zero_strengths_are_identity() {
        let cfg = PerturbConfig {
            probability: 1.0,
            patch_fraction: 0.0,
            noise_sigma: 0.0,
            blur_sigma: 0.0,
            pixelation_factor: 1,
            dct_step: 0.0,
        };
        let mut streams = RngStreams::from_seed(2);
        let x = test_features();
        let img = test_image();
        for kind in ALL_KINDS {
            assert_eq!(
                perturb_features(&x, kind, &cfg, &mut streams.perturb),
                x,
                "{kind:?} on features"
            );
            assert_eq!(
                perturb_image(&img, kind, &cfg, &mut streams.perturb),
                img,
                "{kind:?} on image"
            );
        }
    }

    #[test]
    fn each_kind_changes_something_at_default_strengths() {
        let cfg = PerturbConfig {
            probability: 1.0,
            ..Default::default()
        };
        let img_cfg = PerturbConfig {
            probability: 1.0,
            ..PerturbConfig::image_defaults()
        };
        let mut streams = RngStreams::from_seed(3);
        let x = test_features();
        let img = test_image();
        for kind in ALL_KINDS {
            let fx = perturb_features(&x, kind, &cfg, &mut streams.perturb);
            assert_ne!(fx, x, "{kind:?} left features untouched");
            assert_eq!(fx.len(), x.len());
            let fi = perturb_image(&img, kind, &img_cfg, &mut streams.perturb);
            assert_ne!(fi, img, "{kind:?} left image untouched");
            assert_eq!((fi.width, fi.height), (img.width, img.height));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = PerturbConfig {
            probability: 0.7,
            ..Default::default()
        };
        let x = test_features();
        let mut a = RngStreams::from_seed(9);
        let mut b = RngStreams::from_seed(9);
        for _ in 0..20 {
            assert_eq!(
                maybe_perturb_features(&x, &cfg, &mut a.perturb),
                maybe_perturb_features(&x, &cfg, &mut b.perturb)
            );
        }
    }

    #[test]
    fn dct_round_trips_without_quantization() {
        let x: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let back = dct_1d(&dct_1d(&x, false), true);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_mean_of_constant_signal() {
        let cfg = PerturbConfig {
            probability: 1.0,
            blur_sigma: 2.0,
            ..Default::default()
        };
        let x = vec![0.75; 40];
        let mut streams = RngStreams::from_seed(4);
        let out = perturb_features(&x, PerturbKind::GaussianBlur, &cfg, &mut streams.perturb);
        for v in out {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation_caps() {
        let mut cfg = PerturbConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.probability = 1.5;
        assert!(cfg.validate().is_err());
        cfg = PerturbConfig {
            patch_fraction: 0.9,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg = PerturbConfig {
            pixelation_factor: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
