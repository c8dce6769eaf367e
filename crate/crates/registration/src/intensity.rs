//! Coarse-to-fine rigid registration on a level-set distance.
//!
//! Both images are squashed to `[0, 1]` and quantized to `L` non-zero levels.
//! A point `x` of one image with level `q` is compared with the other image
//! `B` at the transformed position `y` through
//!
//! ```text
//! d(x) = (1/L) · ( Σ_{ℓ ≤ q} dist(y, B_ℓ) + Σ_{ℓ > q} dist(y, B \ B_ℓ) ),   B_ℓ = {B ≥ ℓ}
//! ```
//!
//! which is zero exactly when `y` sits on a pixel of the same level and grows
//! with the spatial distance to the nearest matching level set. The
//! objective is the symmetric mean of `d` over stochastic point samples of
//! both images, minimized by clipped momentum gradient descent at each
//! pyramid level.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use comir::imaging::{decimate, gaussian_blur, Image, Point2D, RigidTransform2D};

use crate::edt::distance_to_set;
use crate::error::{RegistrationError, Result};
use crate::preprocess::{quantize_levels, to_single_channel, unit_normalized};
use crate::result::{Method, RegistrationResult};

/// Mapping of raw values into `[0, 1]` before quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squash {
    /// `1 / (1 + e^{−v})`, for zero-centred representations.
    #[default]
    Logistic,
    /// Per-image min-max stretch, for ordinary intensity images.
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidLevel {
    pub subsampling: usize,
    /// Gaussian smoothing in full-resolution pixels, applied before subsampling.
    pub sigma: f64,
    pub iterations: usize,
    /// Step size at the first iteration, in level pixels.
    pub step_start: f64,
    /// Step size at the last iteration; linear in between.
    pub step_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensityConfig {
    /// Coarsest level first.
    pub levels: Vec<PyramidLevel>,
    pub momentum: f64,
    /// Per-parameter bound on the gradient magnitude.
    pub gradient_clip: f64,
    pub quantization_levels: usize,
    pub squash: Squash,
    /// Fraction of each image's pixels sampled per iteration.
    pub sampling_fraction: f64,
    /// Rotations (radians) added to the initial transform by multistart runs.
    pub multistart_rotations: Vec<f64>,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        let level = |subsampling, sigma, iterations, step_end| PyramidLevel {
            subsampling,
            sigma,
            iterations,
            step_start: 2.0,
            step_end,
        };
        IntensityConfig {
            levels: vec![level(4, 12.0, 3000, 2.0), level(2, 5.0, 1000, 2.0), level(1, 1.0, 500, 0.2)],
            momentum: 0.9,
            gradient_clip: 1.0,
            quantization_levels: 7,
            squash: Squash::Logistic,
            sampling_fraction: 0.005,
            multistart_rotations: vec![-0.3, 0.0, 0.3],
        }
    }
}

impl IntensityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RegistrationError::Config(m));
        if self.levels.is_empty() {
            return bad("at least one pyramid level is required".into());
        }
        if self.levels.windows(2).any(|w| w[1].subsampling >= w[0].subsampling) {
            return bad("pyramid subsampling factors must strictly decrease".into());
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.subsampling == 0 || l.iterations == 0 {
                return bad(format!("level {i}: subsampling and iterations must be positive"));
            }
            if !(l.sigma >= 0.0 && l.step_start > 0.0 && l.step_end > 0.0) {
                return bad(format!("level {i}: sigma must be non-negative and step sizes positive"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.gradient_clip > 0.0) {
            return bad("gradient clip must be positive".into());
        }
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction <= 1.0) {
            return bad(format!("sampling fraction must be in (0, 1], got {}", self.sampling_fraction));
        }
        if self.quantization_levels == 0 || self.quantization_levels > 255 {
            return bad("quantization levels must be in 1..=255".into());
        }
        Ok(())
    }
}

/// One image at one pyramid level: quantized levels and, for every level
/// `q`, the distance map a point of level `q` experiences over this image.
struct LevelImage {
    height: usize,
    width: usize,
    quant: Vec<u8>,
    maps: Vec<Vec<f32>>,
}

impl LevelImage {
    fn new(unit: &Image, level: &PyramidLevel, levels: usize) -> Result<Self> {
        let small = decimate(&gaussian_blur(unit, level.sigma), level.subsampling);
        let (height, width) = (small.height(), small.width());
        if height < 2 || width < 2 {
            return Err(RegistrationError::Degenerate(format!(
                "image is {height}x{width} at subsampling {}",
                level.subsampling
            )));
        }
        let quant: Vec<u8> = small
            .data()
            .iter()
            .map(|&v| ((v.clamp(0.0, 1.0) * levels as f32).round() as usize).min(levels) as u8)
            .collect();
        let cap = (height as f32).hypot(width as f32);
        let mut to_set = Vec::with_capacity(levels);
        let mut to_rest = Vec::with_capacity(levels);
        for l in 1..=levels as u8 {
            let inside: Vec<bool> = quant.iter().map(|&q| q >= l).collect();
            let outside: Vec<bool> = inside.iter().map(|b| !b).collect();
            to_set.push(distance_to_set(&inside, height, width, cap));
            to_rest.push(distance_to_set(&outside, height, width, cap));
        }
        let n = height * width;
        let scale = 1.0 / levels as f32;
        let maps = (0..=levels)
            .map(|q| {
                let mut m = vec![0.0f32; n];
                for (l, (ds, dr)) in to_set.iter().zip(&to_rest).enumerate() {
                    let d = if l < q { ds } else { dr };
                    m.iter_mut().zip(d).for_each(|(a, b)| *a += b * scale);
                }
                m
            })
            .collect();
        Ok(LevelImage {
            height,
            width,
            quant,
            maps,
        })
    }

    /// Bilinear value and gradient of map `q` at `(x, y)`, or `None` outside.
    #[inline]
    fn sample(&self, q: u8, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let (w, h) = (self.width, self.height);
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(w - 2);
        let y0 = (y.floor() as usize).min(h - 2);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let m = &self.maps[q as usize];
        let at = |yy: usize, xx: usize| m[yy * w + xx] as f64;
        let (m00, m01, m10, m11) = (at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1));
        let top = m00 + (m01 - m00) * fx;
        let bot = m10 + (m11 - m10) * fx;
        let value = top + (bot - top) * fy;
        let gx = (1.0 - fy) * (m01 - m00) + fy * (m11 - m10);
        let gy = bot - top;
        Some((value, gx, gy))
    }
}

struct Pyramid {
    reference: Vec<LevelImage>,
    floating: Vec<LevelImage>,
}

fn squash(img: &Image, mode: Squash) -> Result<Image> {
    let single = to_single_channel(img);
    let data = match mode {
        Squash::Logistic => single.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        Squash::MinMax => unit_normalized(single.plane(0))
            .ok_or_else(|| RegistrationError::Degenerate("constant image cannot be min-max stretched".into()))?,
    };
    Ok(single.with_data(1, single.height(), single.width(), data))
}

impl Pyramid {
    fn new(reference: &Image, floating: &Image, cfg: &IntensityConfig) -> Result<Self> {
        cfg.validate()?;
        let r = squash(reference, cfg.squash)?;
        let f = squash(floating, cfg.squash)?;
        quantize_levels(r.data(), cfg.quantization_levels)?;
        quantize_levels(f.data(), cfg.quantization_levels)?;
        let build = |img: &Image| {
            cfg.levels
                .iter()
                .map(|l| LevelImage::new(img, l, cfg.quantization_levels))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Pyramid {
            reference: build(&r)?,
            floating: build(&f)?,
        })
    }
}

/// Level-space view of a full-resolution transform.
#[derive(Clone, Copy)]
struct LevelPose {
    cos: f64,
    sin: f64,
    cx: f64,
    cy: f64,
    tx: f64,
    ty: f64,
}

impl LevelPose {
    fn new(t: &RigidTransform2D, s: f64) -> Self {
        let (sin, cos) = t.angle.sin_cos();
        LevelPose {
            cos,
            sin,
            cx: t.center.x / s,
            cy: t.center.y / s,
            tx: t.tx / s,
            ty: t.ty / s,
        }
    }
}

/// Accumulated distance and its gradient in `(angle, tx, ty)` (level pixels).
#[derive(Default)]
struct Accum {
    sum: f64,
    grad: [f64; 3],
    count: usize,
}

/// Reference point `(x, y)` of level `q` against the floating maps.
#[inline]
fn forward_term(p: &LevelPose, flt: &LevelImage, q: u8, x: f64, y: f64, acc: &mut Accum) {
    let (dx, dy) = (x - p.cx, y - p.cy);
    let u = p.cos * dx - p.sin * dy + p.cx + p.tx;
    let v = p.sin * dx + p.cos * dy + p.cy + p.ty;
    if let Some((d, gx, gy)) = flt.sample(q, u, v) {
        acc.sum += d;
        acc.count += 1;
        // ∂(u, v)/∂θ = R'·(x − c)
        acc.grad[0] += gx * (-p.sin * dx - p.cos * dy) + gy * (p.cos * dx - p.sin * dy);
        acc.grad[1] += gx;
        acc.grad[2] += gy;
    }
}

/// Floating point `(u, v)` of level `q` mapped back into the reference maps.
#[inline]
fn backward_term(p: &LevelPose, reference: &LevelImage, q: u8, u: f64, v: f64, acc: &mut Accum) {
    let (du, dv) = (u - p.cx - p.tx, v - p.cy - p.ty);
    let x = p.cos * du + p.sin * dv + p.cx;
    let y = -p.sin * du + p.cos * dv + p.cy;
    if let Some((d, gx, gy)) = reference.sample(q, x, y) {
        acc.sum += d;
        acc.count += 1;
        // x = Rᵀ(z − c − T) + c: ∂x/∂θ = R'ᵀ(z − c − T), ∂x/∂T = −Rᵀ
        acc.grad[0] += gx * (-p.sin * du + p.cos * dv) + gy * (-p.cos * du - p.sin * dv);
        acc.grad[1] += -(gx * p.cos - gy * p.sin);
        acc.grad[2] += -(gx * p.sin + gy * p.cos);
    }
}

fn symmetric_mean(fwd: &Accum, bwd: &Accum) -> Option<(f64, [f64; 3])> {
    if fwd.count == 0 || bwd.count == 0 {
        return None;
    }
    let (nf, nb) = (fwd.count as f64, bwd.count as f64);
    let value = 0.5 * (fwd.sum / nf + bwd.sum / nb);
    let grad = std::array::from_fn(|k| 0.5 * (fwd.grad[k] / nf + bwd.grad[k] / nb));
    Some((value, grad))
}

fn full_distance(reference: &LevelImage, floating: &LevelImage, pose: &LevelPose) -> Option<(f64, [f64; 3])> {
    let mut fwd = Accum::default();
    for (i, &q) in reference.quant.iter().enumerate() {
        forward_term(pose, floating, q, (i % reference.width) as f64, (i / reference.width) as f64, &mut fwd);
    }
    let mut bwd = Accum::default();
    for (i, &q) in floating.quant.iter().enumerate() {
        backward_term(pose, reference, q, (i % floating.width) as f64, (i / floating.width) as f64, &mut bwd);
    }
    symmetric_mean(&fwd, &bwd)
}

/// Symmetric level-set distance between the two images at full resolution
/// (no smoothing) under `t`, using every pixel. Lower is better.
pub fn level_distance(reference: &Image, floating: &Image, t: &RigidTransform2D, cfg: &IntensityConfig) -> Result<f64> {
    let finest = PyramidLevel {
        subsampling: 1,
        sigma: 0.0,
        iterations: 1,
        step_start: 1.0,
        step_end: 1.0,
    };
    let single = IntensityConfig {
        levels: vec![finest],
        ..cfg.clone()
    };
    let pyr = Pyramid::new(reference, floating, &single)?;
    full_distance(&pyr.reference[0], &pyr.floating[0], &LevelPose::new(t, 1.0))
        .map(|(d, _)| d)
        .ok_or(RegistrationError::EmptyOverlap)
}

/// Minimizes the symmetric level-set distance from `init` over the pyramid.
///
/// Parameters are optimized as `(angle · r, tx, ty)` in level pixels, with
/// `r` the level's half-diagonal. Each iteration samples
/// `sampling_fraction` of both images' pixels, clips every gradient
/// component to `±gradient_clip`, smooths it with momentum
/// (`v ← μ·v + (1−μ)·g`) and steps by the level's step size. The final
/// objective is the full-resolution distance of the last level.
pub fn register_intensity<R: Rng + ?Sized>(
    reference: &Image,
    floating: &Image,
    cfg: &IntensityConfig,
    rng: &mut R,
    init: &RigidTransform2D,
) -> Result<RegistrationResult> {
    let clock = Instant::now();
    let pyr = Pyramid::new(reference, floating, cfg)?;
    let mut sgd_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let center = Point2D::image_center(reference.height(), reference.width());
    let mut t = init.with_center(center);
    let mut trace = Vec::with_capacity(cfg.levels.iter().map(|l| l.iterations).sum());
    let mut iterations = 0;

    for (li, level) in cfg.levels.iter().enumerate() {
        let (r_img, f_img) = (&pyr.reference[li], &pyr.floating[li]);
        let s = level.subsampling as f64;
        let radius = (r_img.height as f64).hypot(r_img.width as f64) / 2.0;
        let per_image = |img: &LevelImage| ((cfg.sampling_fraction * img.quant.len() as f64).round() as usize).max(1);
        let (n_ref, n_flt) = (per_image(r_img), per_image(f_img));
        let mut velocity = [0.0f64; 3];
        for it in 0..level.iterations {
            iterations += 1;
            let pose = LevelPose::new(&t, s);
            let mut fwd = Accum::default();
            for _ in 0..n_ref {
                let i = sgd_rng.random_range(0..r_img.quant.len());
                forward_term(&pose, f_img, r_img.quant[i], (i % r_img.width) as f64, (i / r_img.width) as f64, &mut fwd);
            }
            let mut bwd = Accum::default();
            for _ in 0..n_flt {
                let i = sgd_rng.random_range(0..f_img.quant.len());
                backward_term(&pose, r_img, f_img.quant[i], (i % f_img.width) as f64, (i / f_img.width) as f64, &mut bwd);
            }
            let Some((value, grad)) = symmetric_mean(&fwd, &bwd) else {
                continue;
            };
            trace.push(value);
            let scaled = [grad[0] / radius, grad[1], grad[2]];
            let frac = if level.iterations > 1 {
                it as f64 / (level.iterations - 1) as f64
            } else {
                0.0
            };
            let step = level.step_start + (level.step_end - level.step_start) * frac;
            for (v, g) in velocity.iter_mut().zip(scaled) {
                *v = cfg.momentum * *v + (1.0 - cfg.momentum) * g.clamp(-cfg.gradient_clip, cfg.gradient_clip);
            }
            t = RigidTransform2D::new(
                t.angle - step * velocity[0] / radius,
                t.tx - step * velocity[1] * s,
                t.ty - step * velocity[2] * s,
                center,
            );
        }
    }

    let last = cfg.levels.len() - 1;
    let s = cfg.levels[last].subsampling as f64;
    let objective = full_distance(&pyr.reference[last], &pyr.floating[last], &LevelPose::new(&t, s))
        .map(|(d, _)| d)
        .ok_or(RegistrationError::EmptyOverlap)?;
    Ok(RegistrationResult {
        transform: t,
        method: Method::Intensity,
        objective,
        trace,
        iterations,
        converged: true,
        start_index: None,
        runtime_seconds: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use comir::data::synthetic_scene;
    use crate::test_support::{corner_error, shifted_pair};

    fn raw() -> IntensityConfig {
        IntensityConfig {
            squash: Squash::MinMax,
            ..IntensityConfig::default()
        }
    }

    #[test]
    fn distance_is_zero_at_alignment_and_grows_with_offset() {
        let img = synthetic_scene(64, 64, 3);
        let cfg = raw();
        let at = |dx: f64| level_distance(&img, &img, &RigidTransform2D::translation(dx, 0.0), &cfg).unwrap();
        assert_eq!(at(0.0), 0.0);
        assert!(at(1.0) > 0.0 && at(4.0) > at(1.0));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let img = synthetic_scene(48, 48, 8);
        let pyr = Pyramid::new(&img, &synthetic_scene(48, 48, 9), &raw()).unwrap();
        let (r, f) = (&pyr.reference[2], &pyr.floating[2]);
        let c = Point2D::image_center(48, 48);
        let base = RigidTransform2D::new(0.1, 1.3, -0.7, c);
        let eval = |t: &RigidTransform2D| full_distance(r, f, &LevelPose::new(t, 1.0)).unwrap();
        let (_, g) = eval(&base);
        let h = 1e-5;
        let bumps = [
            RigidTransform2D::new(h, 0.0, 0.0, c),
            RigidTransform2D::new(0.0, h, 0.0, c),
            RigidTransform2D::new(0.0, 0.0, h, c),
        ];
        for (k, b) in bumps.iter().enumerate() {
            let plus = RigidTransform2D::new(base.angle + b.angle, base.tx + b.tx, base.ty + b.ty, c);
            let minus = RigidTransform2D::new(base.angle - b.angle, base.tx - b.tx, base.ty - b.ty, c);
            let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-3 * (1.0 + fd.abs()), "param {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn self_registration_is_a_fixed_point() {
        let img = synthetic_scene(128, 128, 5);
        let r = register_intensity(&img, &img, &raw(), &mut ChaCha8Rng::seed_from_u64(0), &RigidTransform2D::identity()).unwrap();
        assert!(r.transform.corner_displacement(128, 128) < 2.0, "{}", r.transform);
    }

    #[test]
    fn recovers_a_known_perturbation() {
        let c = Point2D::image_center(128, 128);
        let truth = RigidTransform2D::new(0.2, 20.0, 15.0, c);
        let (reference, floating) = shifted_pair(128, &truth, 12);
        let r = register_intensity(&reference, &floating, &raw(), &mut ChaCha8Rng::seed_from_u64(1), &RigidTransform2D::identity()).unwrap();
        let err = corner_error(&truth, &r.transform, 128, 128);
        assert!(err < 5.0, "error {err}: {}", r.transform);
        assert_eq!(r.iterations, 4500);
    }

    #[test]
    fn constant_inputs_are_rejected() {
        let flat = Image::filled(1, 32, 32, 0.2);
        let img = synthetic_scene(32, 32, 1);
        let err = register_intensity(&flat, &img, &IntensityConfig::default(), &mut ChaCha8Rng::seed_from_u64(0), &RigidTransform2D::identity());
        assert!(matches!(err, Err(RegistrationError::Degenerate(_))));
        let bad = IntensityConfig {
            levels: vec![raw().levels[2].clone(), raw().levels[0].clone()],
            ..raw()
        };
        assert!(bad.validate().is_err());
    }
}
