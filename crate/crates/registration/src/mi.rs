//! Mattes mutual information and its (1+1) evolutionary optimizer.
//!
//! The joint histogram pairs reference intensities at sampled pixel centers
//! with floating intensities at the transformed positions (bilinear). The
//! reference axis uses plain binning; the floating axis uses a cubic B-spline
//! Parzen window by default. Intensities are min-max normalized per image.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use comir::imaging::{in_support, sample_plane, Image, Interpolation, Point2D, RigidTransform2D};

use crate::error::{RegistrationError, Result};
use crate::preprocess::{to_single_channel, unit_normalized};
use crate::result::{Method, RegistrationResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParzenWindow {
    /// Cubic B-spline on the floating axis (two padding bins per side).
    #[default]
    CubicBSpline,
    /// Plain binning on both axes.
    Boxcar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MIConfig {
    pub bins: usize,
    /// Reference pixels drawn once per registration; all pixels are used
    /// when the image has no more than this many.
    pub spatial_samples: usize,
    pub es_initial_radius: f64,
    pub es_min_radius: f64,
    pub es_growth: f64,
    pub max_iterations: usize,
    /// Pixels per unit of search radius, so the default initial step is
    /// 2 px. Perturbations act on
    /// `(angle · half-diagonal, tx, ty)`, all in pixels.
    pub radius_unit_px: f64,
    pub parzen: ParzenWindow,
}

impl Default for MIConfig {
    fn default() -> Self {
        MIConfig {
            bins: 80,
            spatial_samples: 500,
            es_initial_radius: 1e-5,
            es_min_radius: 1.5e-8,
            es_growth: 1.0 + 1e-4,
            max_iterations: 1500,
            radius_unit_px: 2e5,
            parzen: ParzenWindow::CubicBSpline,
        }
    }
}

impl MIConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RegistrationError::Config(m));
        if self.bins < 2 || (self.parzen == ParzenWindow::CubicBSpline && self.bins < 5) {
            return bad(format!("MI needs at least 2 bins (5 with the B-spline window), got {}", self.bins));
        }
        if self.spatial_samples == 0 {
            return bad("MI needs at least one spatial sample".into());
        }
        if !(self.es_initial_radius > 0.0 && self.es_min_radius > 0.0 && self.radius_unit_px > 0.0) {
            return bad("ES radii and radius unit must be positive".into());
        }
        if !(self.es_growth > 1.0) {
            return bad(format!("ES growth factor must exceed 1, got {}", self.es_growth));
        }
        Ok(())
    }

    /// Radius multiplier after a rejected step: the fourth root of the
    /// inverse growth, so one success balances four failures.
    pub fn es_shrink(&self) -> f64 {
        self.es_growth.powf(-0.25)
    }
}

/// Precomputed sample set and normalized images for repeated evaluations.
struct MiContext {
    bins: usize,
    parzen: ParzenWindow,
    positions: Vec<Point2D>,
    ref_bins: Vec<usize>,
    flt: Vec<f32>,
    flt_h: usize,
    flt_w: usize,
}

impl MiContext {
    fn new<R: Rng + ?Sized>(reference: &Image, floating: &Image, cfg: &MIConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let r = to_single_channel(reference);
        let f = to_single_channel(floating);
        let r_unit = unit_normalized(r.plane(0)).unwrap_or_else(|| vec![0.0; r.plane_len()]);
        let f_unit = unit_normalized(f.plane(0)).unwrap_or_else(|| vec![0.0; f.plane_len()]);
        let n = r.plane_len();
        let picks: Vec<usize> = if cfg.spatial_samples >= n {
            (0..n).collect()
        } else {
            sample(rng, n, cfg.spatial_samples).into_vec()
        };
        let w = r.width();
        Ok(MiContext {
            bins: cfg.bins,
            parzen: cfg.parzen,
            positions: picks.iter().map(|&i| Point2D::new((i % w) as f64, (i / w) as f64)).collect(),
            ref_bins: picks.iter().map(|&i| plain_bin(r_unit[i], cfg.bins)).collect(),
            flt: f_unit,
            flt_h: f.height(),
            flt_w: f.width(),
        })
    }

    fn evaluate(&self, t: &RigidTransform2D) -> Result<f64> {
        let b = self.bins;
        let mut joint = vec![0.0f64; b * b];
        let mut count = 0usize;
        let (c, s, bx, by) = t.affine();
        for (p, &rb) in self.positions.iter().zip(&self.ref_bins) {
            let x = c * p.x - s * p.y + bx;
            let y = s * p.x + c * p.y + by;
            if !in_support(x, y, self.flt_h, self.flt_w) {
                continue;
            }
            count += 1;
            let v = sample_plane(&self.flt, self.flt_h, self.flt_w, x, y, Interpolation::Linear).clamp(0.0, 1.0);
            let row = &mut joint[rb * b..(rb + 1) * b];
            match self.parzen {
                ParzenWindow::Boxcar => row[plain_bin(v, b)] += 1.0,
                ParzenWindow::CubicBSpline => {
                    let u = 1.5 + v as f64 * (b as f64 - 4.0);
                    let base = u.floor() as usize;
                    for j in base.saturating_sub(1)..(base + 3).min(b) {
                        row[j] += cubic_bspline(u - j as f64);
                    }
                }
            }
        }
        if count == 0 {
            return Err(RegistrationError::EmptyOverlap);
        }
        Ok(mutual_information(&joint, b))
    }
}

fn plain_bin(v: f32, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1)
}

fn cubic_bspline(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0
    } else if t < 2.0 {
        let u = 2.0 - t;
        u * u * u / 6.0
    } else {
        0.0
    }
}

/// Mutual information (nats) of an unnormalized `bins × bins` joint histogram.
fn mutual_information(joint: &[f64], bins: usize) -> f64 {
    let total: f64 = joint.iter().sum();
    let mut pr = vec![0.0f64; bins];
    let mut pf = vec![0.0f64; bins];
    for i in 0..bins {
        for j in 0..bins {
            let v = joint[i * bins + j] / total;
            pr[i] += v;
            pf[j] += v;
        }
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] / total;
            if p > 0.0 {
                mi += p * (p / (pr[i] * pf[j])).ln();
            }
        }
    }
    mi
}

/// Mattes MI between `reference` and `floating` resampled through `t`
/// (reference → floating coordinates), over `cfg.spatial_samples` reference
/// pixels drawn from `rng`. Multichannel inputs are PCA-reduced.
pub fn mattes_mi<R: Rng + ?Sized>(
    reference: &Image,
    floating: &Image,
    t: &RigidTransform2D,
    cfg: &MIConfig,
    rng: &mut R,
) -> Result<f64> {
    MiContext::new(reference, floating, cfg, rng)?.evaluate(t)
}

/// Maximizes Mattes MI with a (1+1) evolutionary strategy from `init`.
///
/// Each iteration perturbs the current best parameters with an isotropic
/// Gaussian of radius `r`; a strictly better candidate is accepted and
/// `r` grows, otherwise `r` shrinks. The run stops after
/// `cfg.max_iterations` or once `r` drops below `cfg.es_min_radius`
/// (reported as converged). The sample set is drawn once.
pub fn register_mi<R: Rng + ?Sized>(
    reference: &Image,
    floating: &Image,
    cfg: &MIConfig,
    rng: &mut R,
    init: &RigidTransform2D,
) -> Result<RegistrationResult> {
    let clock = Instant::now();
    let ctx = MiContext::new(reference, floating, cfg, rng)?;
    let mut es_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let center = Point2D::image_center(reference.height(), reference.width());
    let half_diagonal = (reference.height() as f64).hypot(reference.width() as f64) / 2.0;
    let mut best = init.with_center(center);
    let mut best_mi = ctx.evaluate(&best)?;
    let mut trace = vec![best_mi];
    let mut radius = cfg.es_initial_radius;
    let (grow, shrink) = (cfg.es_growth, cfg.es_shrink());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        if radius < cfg.es_min_radius {
            converged = true;
            break;
        }
        iterations += 1;
        let step = radius * cfg.radius_unit_px;
        let g: [f64; 3] = std::array::from_fn(|_| es_rng.sample(StandardNormal));
        let candidate = RigidTransform2D::new(
            best.angle + step * g[0] / half_diagonal,
            best.tx + step * g[1],
            best.ty + step * g[2],
            center,
        );
        match ctx.evaluate(&candidate) {
            Ok(mi) if mi > best_mi => {
                best = candidate;
                best_mi = mi;
                trace.push(mi);
                radius *= grow;
            }
            _ => radius *= shrink,
        }
    }
    Ok(RegistrationResult {
        transform: best,
        method: Method::Mi,
        objective: best_mi,
        trace,
        iterations,
        converged,
        start_index: None,
        runtime_seconds: clock.elapsed().as_secs_f64(),
    })
}
