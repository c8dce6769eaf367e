//! Resampling: exact quarter-turn permutations and interpolated rigid warps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::geometry::{C4Element, Point2D, RigidTransform2D};
use super::image::Image;
use crate::error::{ComirError, Result};

const SUPPORT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Linear,
    Cubic,
}

impl Interpolation {
    pub const ALL: [Interpolation; 3] = [
        Interpolation::Nearest,
        Interpolation::Linear,
        Interpolation::Cubic,
    ];
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Linear => "linear",
            Interpolation::Cubic => "cubic",
        })
    }
}

impl FromStr for Interpolation {
    type Err = ComirError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Interpolation::Nearest),
            "linear" => Ok(Interpolation::Linear),
            "cubic" => Ok(Interpolation::Cubic),
            other => Err(ComirError::Config(format!("unknown interpolation `{other}`"))),
        }
    }
}

/// Whether `(x, y)` lies inside the pixel-center hull `[0, w−1] × [0, h−1]`.
#[inline]
pub fn in_support(x: f64, y: f64, height: usize, width: usize) -> bool {
    x >= -SUPPORT_EPS
        && y >= -SUPPORT_EPS
        && x <= width as f64 - 1.0 + SUPPORT_EPS
        && y <= height as f64 - 1.0 + SUPPORT_EPS
}

/// Keys cubic convolution kernel with `a = −0.5`.
#[inline]
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Samples one plane at a point known to be inside the support hull.
///
/// Neighbours that fall outside the raster are clamped to the border, which
/// only matters for the cubic stencil and for points sitting exactly on the hull.
#[inline]
pub fn sample_plane(
    plane: &[f32],
    height: usize,
    width: usize,
    x: f64,
    y: f64,
    interp: Interpolation,
) -> f32 {
    let clampx = |i: i64| i.clamp(0, width as i64 - 1) as usize;
    let clampy = |i: i64| i.clamp(0, height as i64 - 1) as usize;
    match interp {
        Interpolation::Nearest => {
            let xi = clampx((x + 0.5).floor() as i64);
            let yi = clampy((y + 0.5).floor() as i64);
            plane[yi * width + xi]
        }
        Interpolation::Linear => {
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let (xa, xb) = (clampx(x0), clampx(x0 + 1));
            let (ya, yb) = (clampy(y0), clampy(y0 + 1));
            let p = |yy: usize, xx: usize| plane[yy * width + xx] as f64;
            let top = p(ya, xa) * (1.0 - fx) + p(ya, xb) * fx;
            let bot = p(yb, xa) * (1.0 - fx) + p(yb, xb) * fx;
            (top * (1.0 - fy) + bot * fy) as f32
        }
        Interpolation::Cubic => {
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let wx = [keys(1.0 + fx), keys(fx), keys(1.0 - fx), keys(2.0 - fx)];
            let wy = [keys(1.0 + fy), keys(fy), keys(1.0 - fy), keys(2.0 - fy)];
            let mut acc = 0.0f64;
            for (j, wyj) in wy.iter().enumerate() {
                if *wyj == 0.0 {
                    continue;
                }
                let yy = clampy(y0 - 1 + j as i64);
                let mut row = 0.0f64;
                for (i, wxi) in wx.iter().enumerate() {
                    if *wxi == 0.0 {
                        continue;
                    }
                    row += wxi * plane[yy * width + clampx(x0 - 1 + i as i64)] as f64;
                }
                acc += wyj * row;
            }
            acc as f32
        }
    }
}

/// Output of [`warp`]: the resampled image and how much of it had no source.
#[derive(Debug, Clone)]
pub struct Warped {
    pub image: Image,
    /// Boolean mask (row-major, `h × w`) of pixels whose source was outside the input.
    pub out_of_support: Vec<bool>,
}

impl Warped {
    pub fn out_of_support_fraction(&self) -> f64 {
        let n = self.out_of_support.iter().filter(|&&b| b).count();
        n as f64 / self.out_of_support.len() as f64
    }
}

/// Resamples `img` so that `out(p) = img(t(p))` for every output pixel `p`.
///
/// Output pixels whose source falls outside the input are set to 0 and flagged.
pub fn warp(
    img: &Image,
    t: &RigidTransform2D,
    interp: Interpolation,
    out_size: (usize, usize),
) -> Warped {
    let (oh, ow) = out_size;
    let (h, w) = (img.height(), img.width());
    let mut out = Image::zeros(img.channels(), oh, ow);
    out.modality = img.modality.clone();
    out.value_range = img.value_range;
    let mut oos = vec![false; oh * ow];
    let (c, s, bx, by) = t.affine();
    for y in 0..oh {
        for x in 0..ow {
            let sx = c * x as f64 - s * y as f64 + bx;
            let sy = s * x as f64 + c * y as f64 + by;
            if !in_support(sx, sy, h, w) {
                oos[y * ow + x] = true;
                continue;
            }
            for ch in 0..img.channels() {
                let v = sample_plane(img.plane(ch), h, w, sx, sy, interp);
                out.set(ch, y, x, v);
            }
        }
    }
    Warped {
        image: out,
        out_of_support: oos,
    }
}

/// Rotates `img` by `angle` about its pixel center (same output size).
pub fn rotate_about_center(img: &Image, angle: f64, interp: Interpolation) -> Warped {
    let t = RigidTransform2D::rotation_about(angle, Point2D::image_center(img.height(), img.width()));
    warp(img, &t, interp, (img.height(), img.width()))
}

/// Source index for output pixel `(x, y)` of a `k` quarter-turn of an `h × w` plane.
#[inline]
fn c4_source(k: usize, x: usize, y: usize, h: usize, w: usize) -> (usize, usize) {
    match k {
        0 => (x, y),
        1 => (w - 1 - y, x),
        2 => (w - 1 - x, h - 1 - y),
        _ => (y, h - 1 - x),
    }
}

/// Quarter-turn permutation of one plane; returns the output dims `(h', w')`.
///
/// `k = 1` agrees with [`warp`] at angle `π/2` about the center, i.e.
/// `out(x, y) = in(w−1−y, x)`.
pub fn rotate_plane_c4(src: &[f32], h: usize, w: usize, k: usize, dst: &mut [f32]) -> (usize, usize) {
    let k = k % 4;
    let (oh, ow) = if k % 2 == 1 { (w, h) } else { (h, w) };
    debug_assert_eq!(src.len(), h * w);
    debug_assert_eq!(dst.len(), h * w);
    if k == 0 {
        dst.copy_from_slice(src);
        return (oh, ow);
    }
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = c4_source(k, x, y, h, w);
            dst[y * ow + x] = src[sy * w + sx];
        }
    }
    (oh, ow)
}

/// Exact quarter-turn rotation; odd turns of a rectangular image swap its dims.
pub fn rotate_c4(img: &Image, g: C4Element) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut data = vec![0.0f32; img.data().len()];
    let mut dims = (h, w);
    let n = h * w;
    for c in 0..img.channels() {
        dims = rotate_plane_c4(img.plane(c), h, w, g.k(), &mut data[c * n..(c + 1) * n]);
    }
    img.with_data(img.channels(), dims.0, dims.1, data)
}

/// Quarter-turn rotation that must preserve the image shape.
pub fn rotate_c4_preserving(img: &Image, g: C4Element) -> Result<Image> {
    if g.k() % 2 == 1 && !img.is_square() {
        return Err(ComirError::NonSquare {
            height: img.height(),
            width: img.width(),
        });
    }
    Ok(rotate_c4(img, g))
}

/// Mirror along the vertical axis (`x ↦ w−1−x`).
pub fn flip_horizontal(img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, y, w - 1 - x));
            }
        }
    }
    out
}

/// Mirror along the horizontal axis (`y ↦ h−1−y`).
pub fn flip_vertical(img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, h - 1 - y, x));
            }
        }
    }
    out
}
