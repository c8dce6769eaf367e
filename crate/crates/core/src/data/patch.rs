//! Aligned patch extraction at random positions and orientations, plus the
//! augmentation menu applied to training patches.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sample::{MultimodalSample, PatchTuple};
use crate::error::{ComirError, Result};
use crate::imaging::{
    flip_horizontal, gaussian_blur, gradient_magnitude, in_support, sample_plane, Image, Interpolation,
    Point2D,
};

/// Placement attempts before giving up on a tuple.
pub const PLACEMENT_RETRIES: usize = 100;

/// Cuts an `h × w` patch whose pixel `u` reads the source at
/// `center + R(angle)(u − c)`, with `c` the patch's own pixel center.
///
/// The whole rotated footprint must lie inside the source; no fill values
/// are ever produced.
pub fn extract_patch(
    img: &Image,
    center: Point2D,
    angle: f64,
    size: (usize, usize),
    interp: Interpolation,
) -> Result<Image> {
    let (ph, pw) = size;
    if ph == 0 || pw == 0 {
        return Err(ComirError::InvalidImage("empty patch size".into()));
    }
    let (s, c) = angle.sin_cos();
    let (cx, cy) = ((pw as f64 - 1.0) / 2.0, (ph as f64 - 1.0) / 2.0);
    let map = |u: f64, v: f64| {
        let (dx, dy) = (u - cx, v - cy);
        (center.x + c * dx - s * dy, center.y + s * dx + c * dy)
    };
    let (h, w) = (img.height(), img.width());
    for (u, v) in [(0.0, 0.0), (pw as f64 - 1.0, 0.0), (0.0, ph as f64 - 1.0), (pw as f64 - 1.0, ph as f64 - 1.0)] {
        let (x, y) = map(u, v);
        if !in_support(x, y, h, w) {
            return Err(ComirError::OutOfBounds(format!(
                "{ph}x{pw} patch at ({:.2}, {:.2}) angle {angle:.4} reaches ({x:.2}, {y:.2}) in a {h}x{w} image",
                center.x, center.y
            )));
        }
    }
    let mut data = Vec::with_capacity(img.channels() * ph * pw);
    for ch in 0..img.channels() {
        let plane = img.plane(ch);
        for v in 0..ph {
            for u in 0..pw {
                let (x, y) = map(u as f64, v as f64);
                data.push(sample_plane(plane, h, w, x, y, interp));
            }
        }
    }
    Ok(img.with_data(img.channels(), ph, pw, data))
}

/// Augmentation settings. Geometric draws are shared by all modalities of a
/// tuple; photometric draws are independent per modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub flip_prob: f64,
    /// Orientations are drawn uniformly from `±rotation_range` radians.
    pub rotation_range: f64,
    /// Round drawn orientations to whole degrees.
    pub integer_degrees: bool,
    pub interpolations: Vec<Interpolation>,
    /// Probability of applying one of noise / blur / coarse dropout / edge image.
    pub photometric_prob: f64,
    pub noise_sigma_max: f64,
    pub blur_sigma: f64,
    pub dropout_rate: f64,
    /// Superpixel side as a fraction of the patch side.
    pub dropout_size_fraction: f64,
    pub gain_prob: f64,
    pub gain_range: (f64, f64),
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            flip_prob: 0.5,
            rotation_range: PI,
            integer_degrees: false,
            interpolations: Interpolation::ALL.to_vec(),
            photometric_prob: 0.2,
            noise_sigma_max: 0.05,
            blur_sigma: 0.1,
            dropout_rate: 0.1,
            dropout_size_fraction: 0.05,
            gain_prob: 0.3,
            gain_range: (0.9, 1.1),
        }
    }
}

impl AugmentationConfig {
    /// No flips, no rotation, nearest sampling, no photometric changes.
    pub fn none() -> Self {
        AugmentationConfig {
            flip_prob: 0.0,
            rotation_range: 0.0,
            integer_degrees: false,
            interpolations: vec![Interpolation::Nearest],
            photometric_prob: 0.0,
            noise_sigma_max: 0.0,
            blur_sigma: 0.0,
            dropout_rate: 0.0,
            dropout_size_fraction: 0.05,
            gain_prob: 0.0,
            gain_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_prob", self.flip_prob),
            ("photometric_prob", self.photometric_prob),
            ("dropout_rate", self.dropout_rate),
            ("gain_prob", self.gain_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ComirError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.interpolations.is_empty() {
            return Err(ComirError::Config("at least one interpolation is required".into()));
        }
        if !(self.rotation_range >= 0.0 && self.rotation_range <= PI) {
            return Err(ComirError::Config(format!(
                "rotation_range {} outside [0, π]",
                self.rotation_range
            )));
        }
        if self.noise_sigma_max < 0.0 || self.blur_sigma < 0.0 {
            return Err(ComirError::Config("noise and blur sigmas must be non-negative".into()));
        }
        if !(self.dropout_size_fraction > 0.0 && self.dropout_size_fraction <= 1.0) {
            return Err(ComirError::Config("dropout_size_fraction must be in (0, 1]".into()));
        }
        if self.gain_range.0 > self.gain_range.1 {
            return Err(ComirError::Config("gain_range is reversed".into()));
        }
        Ok(())
    }
}

fn add_noise<R: Rng + ?Sized>(img: &mut Image, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in img.data_mut() {
        *v += normal.sample(rng) as f32;
    }
}

fn coarse_dropout<R: Rng + ?Sized>(img: &mut Image, rate: f64, size_fraction: f64, rng: &mut R) {
    let (h, w) = (img.height(), img.width());
    let cell = ((size_fraction * h.max(w) as f64).round() as usize).max(1);
    let (gh, gw) = (h.div_ceil(cell), w.div_ceil(cell));
    for ch in 0..img.channels() {
        let plane = img.plane_mut(ch);
        for gy in 0..gh {
            for gx in 0..gw {
                if !rng.random_bool(rate) {
                    continue;
                }
                for y in gy * cell..((gy + 1) * cell).min(h) {
                    plane[y * w + gx * cell..(y * w + ((gx + 1) * cell).min(w))].fill(0.0);
                }
            }
        }
    }
}

/// Applies the photometric part of the augmentation to one modality's patch.
pub fn photometric_augment<R: Rng + ?Sized>(img: &Image, aug: &AugmentationConfig, rng: &mut R) -> Image {
    let mut out = img.clone();
    if aug.photometric_prob > 0.0 && rng.random_bool(aug.photometric_prob) {
        match rng.random_range(0..4) {
            0 => {
                let sigma = rng.random_range(0.0..=aug.noise_sigma_max);
                add_noise(&mut out, sigma, rng);
            }
            1 => out = gaussian_blur(&out, aug.blur_sigma),
            2 => coarse_dropout(&mut out, aug.dropout_rate, aug.dropout_size_fraction, rng),
            _ => out = gradient_magnitude(&out),
        }
    }
    if aug.gain_prob > 0.0 {
        let (lo, hi) = aug.gain_range;
        for ch in 0..out.channels() {
            if rng.random_bool(aug.gain_prob) {
                let g = rng.random_range(lo..=hi) as f32;
                out.plane_mut(ch).iter_mut().for_each(|v| *v *= g);
            }
        }
    }
    out
}

/// Half extents of an `h × w` footprint rotated by `angle`.
fn rotated_half_extents(size: (usize, usize), angle: f64) -> (f64, f64) {
    let (a, b) = ((size.1 as f64 - 1.0) / 2.0, (size.0 as f64 - 1.0) / 2.0);
    let (s, c) = (angle.sin().abs(), angle.cos().abs());
    (a * c + b * s, a * s + b * c)
}

fn draw_orientation<R: Rng + ?Sized>(aug: &AugmentationConfig, rng: &mut R) -> f64 {
    if aug.rotation_range <= 0.0 {
        return 0.0;
    }
    if aug.integer_degrees {
        let max = aug.rotation_range.to_degrees().floor() as i64;
        (rng.random_range(-max..=max) as f64).to_radians()
    } else {
        rng.random_range(-aug.rotation_range..=aug.rotation_range)
    }
}

/// Draws one tuple from a random sample, retrying placement up to
/// [`PLACEMENT_RETRIES`] times.
pub fn sample_tuple<R: Rng + ?Sized>(
    samples: &[MultimodalSample],
    patch_size: (usize, usize),
    aug: &AugmentationConfig,
    rng: &mut R,
) -> Result<PatchTuple> {
    if samples.is_empty() {
        return Err(ComirError::EmptyDataset);
    }
    for _ in 0..PLACEMENT_RETRIES {
        let sample = &samples[rng.random_range(0..samples.len())];
        let angle = draw_orientation(aug, rng);
        let interp = *aug.interpolations.choose(rng).expect("validated non-empty");
        let (ex, ey) = rotated_half_extents(patch_size, angle);
        let (w, h) = (sample.width() as f64, sample.height() as f64);
        if w - 1.0 < 2.0 * ex || h - 1.0 < 2.0 * ey {
            continue;
        }
        let center = Point2D::new(rng.random_range(ex..=w - 1.0 - ex), rng.random_range(ey..=h - 1.0 - ey));
        let patches: Result<Vec<Image>> = sample
            .images
            .iter()
            .map(|img| extract_patch(img, center, angle, patch_size, interp))
            .collect();
        let Ok(mut patches) = patches else { continue };
        let flipped = aug.flip_prob > 0.0 && rng.random_bool(aug.flip_prob);
        if flipped {
            patches = patches.iter().map(flip_horizontal).collect();
        }
        let patches = patches.iter().map(|p| photometric_augment(p, aug, rng)).collect();
        return Ok(PatchTuple {
            patches,
            source_id: sample.id.clone(),
            center,
            orientation: angle,
            flipped,
            interpolation: interp,
        });
    }
    Err(ComirError::PlacementFailed {
        retries: PLACEMENT_RETRIES,
    })
}

/// `n` augmented tuples, fully determined by `seed`.
pub fn sample_batch(
    samples: &[MultimodalSample],
    n: usize,
    patch_size: (usize, usize),
    aug: &AugmentationConfig,
    seed: u64,
) -> Result<Vec<PatchTuple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_batch_with(samples, n, patch_size, aug, &mut rng)
}

/// As [`sample_batch`], drawing from a caller-owned generator.
pub fn sample_batch_with<R: Rng + ?Sized>(
    samples: &[MultimodalSample],
    n: usize,
    patch_size: (usize, usize),
    aug: &AugmentationConfig,
    rng: &mut R,
) -> Result<Vec<PatchTuple>> {
    if n < 2 {
        return Err(ComirError::BatchTooSmall(n));
    }
    aug.validate()?;
    (0..n).map(|_| sample_tuple(samples, patch_size, aug, rng)).collect()
}
