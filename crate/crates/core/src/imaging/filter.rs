//! Separable Gaussian smoothing, finite-difference gradients and decimation.

use super::image::Image;

/// Normalized Gaussian taps with radius `ceil(3σ)` (at least 1).
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / total) as f32).collect()
}

/// Mirror index into `[0, n)` (edge sample not repeated).
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn convolve_rows(plane: &[f32], h: usize, w: usize, k: &[f32], out: &mut [f32]) {
    let r = (k.len() / 2) as i64;
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0f32;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * row[reflect(x as i64 + t as i64 - r, w)];
            }
            out[y * w + x] = acc;
        }
    }
}

fn convolve_cols(plane: &[f32], h: usize, w: usize, k: &[f32], out: &mut [f32]) {
    let r = (k.len() / 2) as i64;
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        dst.fill(0.0);
        for (t, kv) in k.iter().enumerate() {
            let sy = reflect(y as i64 + t as i64 - r, h);
            let src = &plane[sy * w..(sy + 1) * w];
            for x in 0..w {
                dst[x] += kv * src[x];
            }
        }
    }
}

/// Gaussian blur with mirrored borders; `σ ≤ 0` returns a copy.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    let mut tmp = vec![0.0f32; h * w];
    for c in 0..img.channels() {
        convolve_rows(img.plane(c), h, w, &k, &mut tmp);
        convolve_cols(&tmp, h, w, &k, out.plane_mut(c));
    }
    out
}

/// Per-channel gradients `(∂/∂x, ∂/∂y)`: central differences inside,
/// one-sided at the borders.
pub fn gradients(img: &Image) -> (Image, Image) {
    let (h, w) = (img.height(), img.width());
    let mut gx = img.clone();
    let mut gy = img.clone();
    for c in 0..img.channels() {
        let p = img.plane(c);
        let dx = gx.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let (a, b, d) = match (x, w) {
                    (_, 1) => (x, x, 1.0),
                    (0, _) => (0, 1, 1.0),
                    (x, w) if x == w - 1 => (x - 1, x, 1.0),
                    (x, _) => (x - 1, x + 1, 2.0),
                };
                dx[y * w + x] = (p[y * w + b] - p[y * w + a]) / d;
            }
        }
        let dy = gy.plane_mut(c);
        for y in 0..h {
            let (a, b, d) = match (y, h) {
                (_, 1) => (y, y, 1.0),
                (0, _) => (0, 1, 1.0),
                (y, h) if y == h - 1 => (y - 1, y, 1.0),
                (y, _) => (y - 1, y + 1, 2.0),
            };
            for x in 0..w {
                dy[y * w + x] = (p[b * w + x] - p[a * w + x]) / d;
            }
        }
    }
    (gx, gy)
}

/// Per-channel gradient magnitude (the "edge image").
pub fn gradient_magnitude(img: &Image) -> Image {
    let (gx, gy) = gradients(img);
    let data = gx
        .data()
        .iter()
        .zip(gy.data())
        .map(|(a, b)| (a * a + b * b).sqrt())
        .collect();
    img.with_data(img.channels(), img.height(), img.width(), data)
}

/// Keeps every `factor`-th pixel in both directions, starting at the origin.
pub fn decimate(img: &Image, factor: usize) -> Image {
    assert!(factor >= 1);
    if factor == 1 {
        return img.clone();
    }
    let oh = img.height().div_ceil(factor);
    let ow = img.width().div_ceil(factor);
    let mut data = Vec::with_capacity(img.channels() * oh * ow);
    for c in 0..img.channels() {
        let p = img.plane(c);
        for y in 0..oh {
            for x in 0..ow {
                data.push(p[y * factor * img.width() + x * factor]);
            }
        }
    }
    img.with_data(img.channels(), oh, ow, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for s in [0.1, 1.0, 5.0, 12.0] {
            let k = gaussian_kernel(s);
            assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            assert!(k.iter().zip(k.iter().rev()).all(|(a, b)| a == b));
        }
        // σ = 0.1 leaves essentially nothing off-center
        assert!(gaussian_kernel(0.1)[0] < 1e-20);
    }

    #[test]
    fn blur_preserves_constants_and_mean_of_impulse() {
        let c = Image::filled(1, 9, 7, 0.3);
        assert!(gaussian_blur(&c, 2.0).max_abs_diff(&c) < 1e-6);
        let mut imp = Image::zeros(1, 31, 31);
        imp.set(0, 15, 15, 1.0);
        let b = gaussian_blur(&imp, 2.0);
        assert!((b.data().iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(b.get(0, 15, 15) > b.get(0, 15, 16));
    }

    #[test]
    fn gradients_of_a_ramp() {
        let img = Image::from_fn(4, 5, |x, y| 2.0 * x as f32 - y as f32);
        let (gx, gy) = gradients(&img);
        assert!(gx.data().iter().all(|&v| (v - 2.0).abs() < 1e-6));
        assert!(gy.data().iter().all(|&v| (v + 1.0).abs() < 1e-6));
        let m = gradient_magnitude(&img);
        assert!((m.get(0, 2, 2) - 5f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn decimation_picks_grid() {
        let img = Image::from_fn(5, 5, |x, y| (y * 5 + x) as f32);
        let d = decimate(&img, 2);
        assert_eq!(d.data(), &[0.0, 2.0, 4.0, 10.0, 12.0, 14.0, 20.0, 22.0, 24.0]);
    }
}
