//! Procedural test scenes: smooth background, Gaussian blobs and rotated
//! rectangles/ellipses, so that both intensity- and feature-based methods
//! have structure to work with at several scales.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::sample::MultimodalSample;
use crate::error::Result;
use crate::imaging::Image;

/// A single-channel scene in `[0, 1]`, fully determined by `seed`.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = (height * width) as f64;
    let scale = (area.sqrt() / 256.0).max(0.25);
    let mut v = vec![0.0f64; height * width];

    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let period = rng.random_range(60.0..160.0) * scale;
            let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (theta.cos() / period, theta.sin() / period, phase, rng.random_range(0.04..0.08))
        })
        .collect();
    for y in 0..height {
        for x in 0..width {
            let mut s = 0.35;
            for &(fx, fy, ph, amp) in &waves {
                s += amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64) + ph).sin();
            }
            v[y * width + x] = s;
        }
    }

    let blobs = (area / 1500.0).ceil() as usize;
    for _ in 0..blobs {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let sigma = rng.random_range(2.0..10.0) * scale;
        let amp = rng.random_range(-0.35..0.45);
        let r = (3.0 * sigma).ceil() as i64;
        for y in (cy as i64 - r).max(0)..(cy as i64 + r + 1).min(height as i64) {
            for x in (cx as i64 - r).max(0)..(cx as i64 + r + 1).min(width as i64) {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v[y as usize * width + x as usize] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }

    let shapes = (area / 2500.0).ceil() as usize;
    for _ in 0..shapes {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let a = rng.random_range(3.0..18.0) * scale;
        let b = rng.random_range(3.0..18.0) * scale;
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let level = rng.random_range(0.0..1.0);
        let ellipse = rng.random_bool(0.5);
        let (s, c) = theta.sin_cos();
        let r = a.max(b).ceil() as i64 + 1;
        for y in (cy as i64 - r).max(0)..(cy as i64 + r + 1).min(height as i64) {
            for x in (cx as i64 - r).max(0)..(cx as i64 + r + 1).min(width as i64) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let (u, w) = (c * dx + s * dy, -s * dx + c * dy);
                let inside = if ellipse {
                    (u / a).powi(2) + (w / b).powi(2) <= 1.0
                } else {
                    u.abs() <= a && w.abs() <= b
                };
                if inside {
                    let p = &mut v[y as usize * width + x as usize];
                    *p = 0.3 * *p + 0.7 * level;
                }
            }
        }
    }

    let data = v.into_iter().map(|x| x.clamp(0.0, 1.0) as f32).collect();
    Image::new(1, height, width, data).expect("finite scene")
}

/// Two aligned modalities: a scene and its intensity inversion with additive
/// Gaussian noise.
pub fn synthetic_pair(id: &str, height: usize, width: usize, noise_sigma: f64, seed: u64) -> Result<MultimodalSample> {
    let first = synthetic_scene(height, width, seed).with_modality("m1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let data = first
        .data()
        .iter()
        .map(|&v| 1.0 - v + if noise_sigma > 0.0 { normal.sample(&mut rng) as f32 } else { 0.0 })
        .collect();
    let second = first.with_data(1, height, width, data).with_modality("m2");
    MultimodalSample::new(id, vec![first, second])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson_f32;

    #[test]
    fn scenes_are_seeded_and_structured() {
        let a = synthetic_scene(64, 80, 1);
        assert_eq!(a, synthetic_scene(64, 80, 1));
        assert_ne!(a, synthetic_scene(64, 80, 2));
        let (lo, hi) = a.min_max();
        assert!(lo >= 0.0 && hi <= 1.0 && hi - lo > 0.3);
    }

    #[test]
    fn pair_is_anticorrelated() {
        let s = synthetic_pair("x", 64, 64, 0.05, 3).unwrap();
        let r = pearson_f32(s.images[0].data(), s.images[1].data()).unwrap();
        assert!(r < -0.8, "{r}");
        let clean = synthetic_pair("x", 32, 32, 0.0, 3).unwrap();
        assert!(clean.images[0].data().iter().zip(clean.images[1].data()).all(|(a, b)| (a + b - 1.0).abs() < 1e-6));
    }
}
