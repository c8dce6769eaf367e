//! Keypoint registration: difference-of-Gaussian extrema with gradient
//! histogram descriptors, nearest-neighbour ratio matching and a rigid
//! consensus fit.

use std::f64::consts::TAU;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use comir::imaging::{decimate, gaussian_blur, Image, Point2D, RigidTransform2D};

use crate::error::{RegistrationError, Result};
use crate::preprocess::{to_single_channel, unit_normalized};
use crate::result::{Method, RegistrationResult};

/// Blur assumed to be present in the input image.
const INPUT_SIGMA: f64 = 0.5;
const ORIENTATION_BINS: usize = 36;
const ORIENTATION_PEAK_RATIO: f64 = 0.8;
const DESCRIPTOR_CLAMP: f32 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Spatial histogram cells per descriptor row and column.
    pub descriptor_width: usize,
    pub orientation_bins: usize,
    /// Octaves are processed while their smaller side is at least this.
    pub min_octave_size: usize,
    /// Larger inputs are halved until their larger side fits.
    pub max_octave_size: usize,
    pub steps_per_octave: usize,
    pub initial_sigma: f64,
    /// Minimum absolute DoG response (on `[0, 1]` intensities) per octave
    /// step; the effective threshold is `contrast_threshold / steps`.
    pub contrast_threshold: f64,
    /// Maximum principal-curvature ratio of accepted extrema.
    pub edge_ratio: f64,
    /// Accept a match when nearest / second-nearest distance is below this.
    pub ratio_test: f64,
    /// Consensus residual threshold in pixels.
    pub inlier_threshold: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            descriptor_width: 4,
            orientation_bins: 8,
            min_octave_size: 128,
            max_octave_size: 1024,
            steps_per_octave: 3,
            initial_sigma: 1.6,
            contrast_threshold: 0.04,
            edge_ratio: 10.0,
            ratio_test: 0.92,
            inlier_threshold: 3.0,
            max_iterations: 1000,
            min_inliers: 4,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RegistrationError::Config(m));
        if self.min_octave_size == 0 || self.min_octave_size > self.max_octave_size {
            return bad(format!(
                "octave size range [{}, {}] is empty",
                self.min_octave_size, self.max_octave_size
            ));
        }
        if self.min_inliers < 2 {
            return bad(format!("a rigid fit needs at least 2 inliers, min_inliers is {}", self.min_inliers));
        }
        if self.descriptor_width == 0 || self.orientation_bins == 0 || self.steps_per_octave == 0 {
            return bad("descriptor width, orientation bins and octave steps must be positive".into());
        }
        if !(self.initial_sigma > INPUT_SIGMA) {
            return bad(format!("initial sigma must exceed the assumed input blur {INPUT_SIGMA}"));
        }
        if !(self.ratio_test > 0.0 && self.ratio_test <= 1.0 && self.inlier_threshold > 0.0 && self.edge_ratio > 1.0) {
            return bad("ratio test must be in (0, 1], inlier threshold positive, edge ratio above 1".into());
        }
        Ok(())
    }
}

/// A detected keypoint in input-image pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub position: Point2D,
    /// Gaussian scale in input pixels.
    pub sigma: f64,
    /// Dominant gradient direction, radians.
    pub orientation: f64,
    pub response: f64,
    pub descriptor: Vec<f32>,
}

/// A putative match: reference position and floating position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub reference: Point2D,
    pub floating: Point2D,
}

/// A plane with dimensions, the unit of the scale space.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f32>,
}

impl Plane {
    fn from_image(img: &Image) -> Self {
        Plane {
            h: img.height(),
            w: img.width(),
            v: img.plane(0).to_vec(),
        }
    }

    fn to_image(&self) -> Image {
        Image::new(1, self.h, self.w, self.v.clone()).expect("finite plane")
    }

    #[inline]
    fn at(&self, y: usize, x: usize) -> f32 {
        self.v[y * self.w + x]
    }

    fn blurred(&self, sigma: f64) -> Plane {
        Plane::from_image(&gaussian_blur(&self.to_image(), sigma))
    }

    /// Central-difference gradient magnitude and angle at an interior pixel.
    #[inline]
    fn gradient(&self, y: usize, x: usize) -> (f64, f64) {
        let dx = (self.at(y, x + 1) - self.at(y, x - 1)) as f64;
        let dy = (self.at(y + 1, x) - self.at(y - 1, x)) as f64;
        (dx.hypot(dy), dy.atan2(dx))
    }
}

struct Octave {
    /// Input pixels per octave pixel.
    scale: f64,
    gaussians: Vec<Plane>,
    dogs: Vec<Plane>,
}

fn scale_space(img: &Image, cfg: &FeatureConfig) -> Vec<Octave> {
    let mut base = Plane::from_image(img);
    let mut scale = 1.0;
    while base.h.max(base.w) > cfg.max_octave_size {
        base = Plane::from_image(&decimate(&base.blurred(1.0).to_image(), 2));
        scale *= 2.0;
    }
    let s = cfg.steps_per_octave;
    let sigma0 = cfg.initial_sigma;
    base = base.blurred((sigma0 * sigma0 - INPUT_SIGMA * INPUT_SIGMA).sqrt());
    let mut octaves = Vec::new();
    while base.h.min(base.w) >= cfg.min_octave_size {
        let mut gaussians = vec![base.clone()];
        for k in 1..s + 3 {
            let prev = sigma0 * 2f64.powf((k - 1) as f64 / s as f64);
            let next = sigma0 * 2f64.powf(k as f64 / s as f64);
            let g = gaussians[k - 1].blurred((next * next - prev * prev).sqrt());
            gaussians.push(g);
        }
        let dogs = gaussians
            .windows(2)
            .map(|g| Plane {
                h: g[0].h,
                w: g[0].w,
                v: g[1].v.iter().zip(&g[0].v).map(|(a, b)| a - b).collect(),
            })
            .collect();
        base = Plane::from_image(&decimate(&gaussians[s].to_image(), 2));
        octaves.push(Octave { scale, gaussians, dogs });
        scale *= 2.0;
    }
    octaves
}

/// Refined extremum location within an octave.
struct Extremum {
    x: f64,
    y: f64,
    layer: f64,
    response: f64,
}

fn is_extremum(dogs: &[Plane], l: usize, y: usize, x: usize) -> bool {
    let v = dogs[l].at(y, x);
    let (mut is_max, mut is_min) = (true, true);
    for (dl, plane) in dogs[l - 1..=l + 1].iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if dl == 1 && yy == y && xx == x {
                    continue;
                }
                let n = plane.at(yy, xx);
                is_max &= v > n;
                is_min &= v < n;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    is_max || is_min
}

/// Quadratic refinement in `(x, y, layer)`, moving to a neighbour while the
/// offset exceeds half a sample. Returns `None` for unstable or low-contrast
/// or edge-like extrema.
fn refine(dogs: &[Plane], mut l: usize, mut y: usize, mut x: usize, cfg: &FeatureConfig) -> Option<Extremum> {
    let (h, w) = (dogs[0].h, dogs[0].w);
    let s = cfg.steps_per_octave;
    for _ in 0..5 {
        let d = |dl: isize, dy: isize, dx: isize| {
            dogs[(l as isize + dl) as usize].at((y as isize + dy) as usize, (x as isize + dx) as usize) as f64
        };
        let g = [
            (d(0, 0, 1) - d(0, 0, -1)) / 2.0,
            (d(0, 1, 0) - d(0, -1, 0)) / 2.0,
            (d(1, 0, 0) - d(-1, 0, 0)) / 2.0,
        ];
        let c = d(0, 0, 0);
        let dxx = d(0, 0, 1) + d(0, 0, -1) - 2.0 * c;
        let dyy = d(0, 1, 0) + d(0, -1, 0) - 2.0 * c;
        let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * c;
        let dxy = (d(0, 1, 1) - d(0, 1, -1) - d(0, -1, 1) + d(0, -1, -1)) / 4.0;
        let dxs = (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1)) / 4.0;
        let dys = (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0)) / 4.0;
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let off = solve3(&hess, &g)?.map(|v| -v);
        if off.iter().all(|v| v.abs() <= 0.5) {
            let response = c + 0.5 * (g[0] * off[0] + g[1] * off[1] + g[2] * off[2]);
            if response.abs() < cfg.contrast_threshold / s as f64 {
                return None;
            }
            let (tr, det) = (dxx + dyy, dxx * dyy - dxy * dxy);
            let r = cfg.edge_ratio;
            if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
                return None;
            }
            return Some(Extremum {
                x: x as f64 + off[0],
                y: y as f64 + off[1],
                layer: l as f64 + off[2],
                response,
            });
        }
        if off.iter().any(|v| v.abs() > 1e3) {
            return None;
        }
        let step = |v: f64| v.round() as isize;
        let (nx, ny, nl) = (x as isize + step(off[0]), y as isize + step(off[1]), l as isize + step(off[2]));
        if nl < 1 || nl > s as isize || nx < 1 || ny < 1 || nx >= w as isize - 1 || ny >= h as isize - 1 {
            return None;
        }
        (x, y, l) = (nx as usize, ny as usize, nl as usize);
    }
    None
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-14 {
        return None;
    }
    Some(std::array::from_fn(|k| {
        let mut m = *a;
        for (row, bv) in m.iter_mut().zip(b) {
            row[k] = *bv;
        }
        det(&m) / d
    }))
}

/// Dominant orientations at an octave location with scale `sigma` (octave pixels).
fn orientations(g: &Plane, x: f64, y: f64, sigma: f64) -> Vec<f64> {
    let weight_sigma = 1.5 * sigma;
    let radius = (3.0 * weight_sigma).round() as isize;
    let (xi, yi) = (x.round() as isize, y.round() as isize);
    let mut hist = [0.0f64; ORIENTATION_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (xi + dx, yi + dy);
            if px < 1 || py < 1 || px >= g.w as isize - 1 || py >= g.h as isize - 1 {
                continue;
            }
            let (mag, ang) = g.gradient(py as usize, px as usize);
            let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * weight_sigma * weight_sigma)).exp();
            let bin = ((ang.rem_euclid(TAU) / TAU * ORIENTATION_BINS as f64).floor() as usize) % ORIENTATION_BINS;
            hist[bin] += wgt * mag;
        }
    }
    let n = ORIENTATION_BINS;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            (hist[(i + n - 2) % n] + hist[(i + 2) % n]) / 16.0
                + (hist[(i + n - 1) % n] + hist[(i + 1) % n]) * 4.0 / 16.0
                + hist[i] * 6.0 / 16.0
        })
        .collect();
    let peak = smooth.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .filter_map(|i| {
            let (l, c, r) = (smooth[(i + n - 1) % n], smooth[i], smooth[(i + 1) % n]);
            if c > l && c > r && c >= ORIENTATION_PEAK_RATIO * peak {
                let offset = 0.5 * (l - r) / (l - 2.0 * c + r);
                Some(((i as f64 + 0.5 + offset) / n as f64 * TAU).rem_euclid(TAU))
            } else {
                None
            }
        })
        .collect()
}

/// Gradient histogram descriptor: `width × width` cells of `bins`
/// orientation bins, rotated to `orientation`, trilinearly interpolated,
/// Gaussian weighted, normalized, clamped and renormalized.
fn descriptor(g: &Plane, x: f64, y: f64, sigma: f64, orientation: f64, cfg: &FeatureConfig) -> Vec<f32> {
    let d = cfg.descriptor_width;
    let nb = cfg.orientation_bins;
    let cell = 3.0 * sigma;
    let radius = (cell * std::f64::consts::SQRT_2 * (d as f64 + 1.0) / 2.0).round() as isize;
    let (sin, cos) = orientation.sin_cos();
    let (xi, yi) = (x.round() as isize, y.round() as isize);
    let mut hist = vec![0.0f64; d * d * nb];
    let half = d as f64 / 2.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (xi + dx, yi + dy);
            if px < 1 || py < 1 || px >= g.w as isize - 1 || py >= g.h as isize - 1 {
                continue;
            }
            let (ox, oy) = (px as f64 - x, py as f64 - y);
            // sample offset in the keypoint frame, in cell units
            let rx = (cos * ox + sin * oy) / cell;
            let ry = (-sin * ox + cos * oy) / cell;
            let (cb, rb) = (rx + half - 0.5, ry + half - 0.5);
            if cb <= -1.0 || rb <= -1.0 || cb >= d as f64 || rb >= d as f64 {
                continue;
            }
            let (mag, ang) = g.gradient(py as usize, px as usize);
            let wgt = (-(rx * rx + ry * ry) / (2.0 * half * half)).exp();
            let ob = (ang - orientation).rem_euclid(TAU) / TAU * nb as f64;
            let (r0, c0, o0) = (rb.floor(), cb.floor(), ob.floor());
            let (fr, fc, fo) = (rb - r0, cb - c0, ob - o0);
            for (ri, wr) in [(r0 as isize, 1.0 - fr), (r0 as isize + 1, fr)] {
                if ri < 0 || ri >= d as isize {
                    continue;
                }
                for (ci, wc) in [(c0 as isize, 1.0 - fc), (c0 as isize + 1, fc)] {
                    if ci < 0 || ci >= d as isize {
                        continue;
                    }
                    for (oi, wo) in [(o0 as usize % nb, 1.0 - fo), ((o0 as usize + 1) % nb, fo)] {
                        hist[(ri as usize * d + ci as usize) * nb + oi] += mag * wgt * wr * wc * wo;
                    }
                }
            }
        }
    }
    let mut out: Vec<f32> = hist.iter().map(|&v| v as f32).collect();
    let normalize = |v: &mut Vec<f32>| {
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
    };
    normalize(&mut out);
    out.iter_mut().for_each(|x| *x = x.min(DESCRIPTOR_CLAMP));
    normalize(&mut out);
    out
}

/// Detects scale-space keypoints and computes their descriptors.
/// Multichannel inputs are PCA-reduced and intensities min-max normalized.
pub fn detect_keypoints(img: &Image, cfg: &FeatureConfig) -> Result<Vec<Keypoint>> {
    cfg.validate()?;
    let single = to_single_channel(img);
    let unit = unit_normalized(single.plane(0))
        .ok_or_else(|| RegistrationError::Degenerate("constant image has no keypoints".into()))?;
    let unit = single.with_data(1, single.height(), single.width(), unit);
    let s = cfg.steps_per_octave;
    let mut keypoints = Vec::new();
    for octave in scale_space(&unit, cfg) {
        let dogs = &octave.dogs;
        let (h, w) = (dogs[0].h, dogs[0].w);
        let prefilter = 0.5 * cfg.contrast_threshold / s as f64;
        for l in 1..=s {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    if (dogs[l].at(y, x) as f64).abs() < prefilter || !is_extremum(dogs, l, y, x) {
                        continue;
                    }
                    let Some(e) = refine(dogs, l, y, x, cfg) else { continue };
                    let sigma = cfg.initial_sigma * 2f64.powf(e.layer / s as f64);
                    let g = &octave.gaussians[(e.layer.round() as usize).clamp(1, s)];
                    for orientation in orientations(g, e.x, e.y, sigma) {
                        keypoints.push(Keypoint {
                            position: Point2D::new(e.x * octave.scale, e.y * octave.scale),
                            sigma: sigma * octave.scale,
                            orientation,
                            response: e.response.abs(),
                            descriptor: descriptor(g, e.x, e.y, sigma, orientation, cfg),
                        });
                    }
                }
            }
        }
    }
    Ok(keypoints)
}

/// Nearest-neighbour matching with the ratio test, reference → floating.
pub fn match_descriptors(reference: &[Keypoint], floating: &[Keypoint], ratio: f64) -> Vec<Correspondence> {
    let dist2 = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>();
    reference
        .iter()
        .filter_map(|r| {
            let (mut best, mut second) = ((f32::INFINITY, usize::MAX), f32::INFINITY);
            for (j, f) in floating.iter().enumerate() {
                let d = dist2(&r.descriptor, &f.descriptor);
                if d < best.0 {
                    second = best.0;
                    best = (d, j);
                } else if d < second {
                    second = d;
                }
            }
            let accept = best.1 != usize::MAX && (best.0 as f64).sqrt() < ratio * (second as f64).sqrt();
            accept.then(|| Correspondence {
                reference: r.position,
                floating: floating[best.1].position,
            })
        })
        .collect()
}

/// Least-squares rigid transform (pivot `center`) mapping reference points
/// onto floating points. `None` when fewer than two distinct points are given.
pub fn procrustes_rigid(matches: &[Correspondence], center: Point2D) -> Option<RigidTransform2D> {
    if matches.len() < 2 {
        return None;
    }
    let n = matches.len() as f64;
    let (mut px, mut py, mut qx, mut qy) = (0.0, 0.0, 0.0, 0.0);
    for m in matches {
        px += m.reference.x;
        py += m.reference.y;
        qx += m.floating.x;
        qy += m.floating.y;
    }
    let (px, py, qx, qy) = (px / n, py / n, qx / n, qy / n);
    let (mut sxx, mut sxy, mut spread) = (0.0, 0.0, 0.0);
    for m in matches {
        let (ax, ay) = (m.reference.x - px, m.reference.y - py);
        let (bx, by) = (m.floating.x - qx, m.floating.y - qy);
        sxx += ax * bx + ay * by;
        sxy += ax * by - ay * bx;
        spread += ax * ax + ay * ay;
    }
    if spread < 1e-18 {
        return None;
    }
    let angle = sxy.atan2(sxx);
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (px - center.x, py - center.y);
    let tx = qx - center.x - (c * dx - s * dy);
    let ty = qy - center.y - (s * dx + c * dy);
    Some(RigidTransform2D::new(angle, tx, ty, center))
}

/// Rigid motion from two correspondences; exact when they are related by one.
pub fn rigid_from_two_points(a: Correspondence, b: Correspondence, center: Point2D) -> Option<RigidTransform2D> {
    procrustes_rigid(&[a, b], center)
}

fn residual(t: &RigidTransform2D, m: &Correspondence) -> f64 {
    t.apply(m.reference).distance(&m.floating)
}

/// Consensus fit over two-point samples followed by least-squares refits on
/// the inlier set until it stops changing. Returns the transform, the inlier
/// mask and the trace of best consensus sizes.
pub fn estimate_rigid_consensus<R: Rng + ?Sized>(
    matches: &[Correspondence],
    center: Point2D,
    cfg: &FeatureConfig,
    rng: &mut R,
) -> Result<(RigidTransform2D, Vec<bool>, Vec<f64>)> {
    let needed = cfg.min_inliers;
    if matches.len() < needed {
        return Err(RegistrationError::TooFewInliers {
            found: matches.len(),
            needed,
        });
    }
    let count = |t: &RigidTransform2D| matches.iter().filter(|m| residual(t, m) < cfg.inlier_threshold).count();
    let mut best: Option<(RigidTransform2D, usize)> = None;
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iterations {
        let i = rng.random_range(0..matches.len());
        let j = rng.random_range(0..matches.len() - 1);
        let j = if j >= i { j + 1 } else { j };
        let Some(t) = rigid_from_two_points(matches[i], matches[j], center) else { continue };
        let n = count(&t);
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((t, n));
            trace.push(n as f64);
        }
    }
    let (mut t, _) = best.ok_or(RegistrationError::TooFewInliers { found: 0, needed })?;
    let mut mask: Vec<bool> = matches.iter().map(|m| residual(&t, m) < cfg.inlier_threshold).collect();
    for _ in 0..10 {
        let inliers: Vec<Correspondence> = matches.iter().zip(&mask).filter(|(_, &k)| k).map(|(m, _)| *m).collect();
        let Some(refit) = procrustes_rigid(&inliers, center) else { break };
        let next: Vec<bool> = matches.iter().map(|m| residual(&refit, m) < cfg.inlier_threshold).collect();
        t = refit;
        if next == mask {
            break;
        }
        mask = next;
    }
    let found = mask.iter().filter(|&&k| k).count();
    if found < needed {
        return Err(RegistrationError::TooFewInliers { found, needed });
    }
    Ok((t, mask, trace))
}

/// Detects, matches and robustly fits a rigid transform mapping reference
/// coordinates to floating coordinates.
pub fn register_features<R: Rng + ?Sized>(
    reference: &Image,
    floating: &Image,
    cfg: &FeatureConfig,
    rng: &mut R,
) -> Result<RegistrationResult> {
    let clock = Instant::now();
    let kr = detect_keypoints(reference, cfg)?;
    let kf = detect_keypoints(floating, cfg)?;
    let needed = cfg.min_inliers;
    for k in [&kr, &kf] {
        if k.len() < needed {
            return Err(RegistrationError::TooFewKeypoints { found: k.len(), needed });
        }
    }
    let matches = match_descriptors(&kr, &kf, cfg.ratio_test);
    let center = Point2D::image_center(reference.height(), reference.width());
    let (transform, mask, trace) = estimate_rigid_consensus(&matches, center, cfg, rng)?;
    let inliers = mask.iter().filter(|&&k| k).count();
    Ok(RegistrationResult {
        transform,
        method: Method::Feature,
        objective: inliers as f64,
        trace,
        iterations: cfg.max_iterations,
        converged: true,
        start_index: None,
        runtime_seconds: clock.elapsed().as_secs_f64(),
    })
}
