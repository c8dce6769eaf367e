//! Channel reduction and intensity quantization shared by the backends.

use comir::imaging::Image;

use crate::error::{RegistrationError, Result};

/// Projects a multichannel image onto its first principal component
/// (channel-mean centered). The component's sign is fixed so that its
/// largest-magnitude loading is positive.
pub fn pca_reduce(img: &Image) -> Image {
    let c = img.channels();
    let n = img.plane_len();
    let means: Vec<f64> = (0..c)
        .map(|k| img.plane(k).iter().map(|&v| v as f64).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![0.0f64; c * c];
    for i in 0..c {
        for j in i..c {
            let s: f64 = img
                .plane(i)
                .iter()
                .zip(img.plane(j))
                .map(|(&a, &b)| (a as f64 - means[i]) * (b as f64 - means[j]))
                .sum();
            cov[i * c + j] = s / n as f64;
            cov[j * c + i] = s / n as f64;
        }
    }
    let (values, vectors) = jacobi_eigen(cov, c);
    let top = (0..c).max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a))).unwrap_or(0);
    let mut v: Vec<f64> = (0..c).map(|k| vectors[k * c + top]).collect();
    let lead = (0..c)
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
        .unwrap_or(0);
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let data = (0..n)
        .map(|p| (0..c).map(|k| v[k] * (img.plane(k)[p] as f64 - means[k])).sum::<f64>() as f32)
        .collect();
    img.with_data(1, img.height(), img.width(), data)
}

/// Returns single-channel images unchanged and PCA-reduces the rest.
pub fn to_single_channel(img: &Image) -> Image {
    if img.channels() == 1 {
        img.clone()
    } else {
        pca_reduce(img)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n × n` matrix.
/// Returns eigenvalues and the row-major matrix whose columns are eigenvectors.
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// `(v − min) / (max − min)` over the first channel; `None` for constant planes.
pub(crate) fn unit_normalized(plane: &[f32]) -> Option<Vec<f32>> {
    let (lo, hi) = plane
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    (span > 0.0).then(|| plane.iter().map(|&v| (v - lo) / span).collect())
}

/// Quantizes values in `[0, 1]` to `{0, …, levels}` by rounding `v · levels`.
/// Errors when every pixel lands on the same level.
pub fn quantize_levels(values: &[f32], levels: usize) -> Result<Vec<u8>> {
    if levels == 0 || levels > 255 {
        return Err(RegistrationError::Config(format!("quantization levels must be in 1..=255, got {levels}")));
    }
    let q: Vec<u8> = values
        .iter()
        .map(|&v| ((v.clamp(0.0, 1.0) * levels as f32).round() as usize).min(levels) as u8)
        .collect();
    if q.iter().all(|&x| x == q[0]) {
        return Err(RegistrationError::Degenerate(format!(
            "image is constant (level {}) after quantization",
            q[0]
        )));
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_recovers_the_dominant_direction() {
        // channels are a·s and b·s for a shared signal s: the projection is ±|(a,b)|·(s − mean)
        let s: Vec<f32> = (0..64).map(|i| ((i * 37) % 17) as f32 / 17.0).collect();
        let mut data = s.iter().map(|v| 3.0 * v).collect::<Vec<_>>();
        data.extend(s.iter().map(|v| -4.0 * v));
        let img = Image::new(2, 8, 8, data).unwrap();
        let out = pca_reduce(&img);
        assert_eq!(out.channels(), 1);
        let mean = s.iter().sum::<f32>() / 64.0;
        for (o, v) in out.data().iter().zip(&s) {
            // loading (−0.6, 0.8) after sign fixing, so the projection is −5(s − m)
            assert!((o - (-5.0 * (v - mean))).abs() < 1e-4, "{o} vs {}", -5.0 * (v - mean));
        }
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, vecs) = jacobi_eigen(a.clone(), 3);
        for k in 0..3 {
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i * 3 + j] * vecs[j * 3 + k]).sum();
                assert!((av - vals[k] * vecs[i * 3 + k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn quantization_levels_and_degeneracy() {
        let q = quantize_levels(&[0.0, 0.07, 0.08, 0.5, 1.0, 1.2], 7).unwrap();
        assert_eq!(q, vec![0, 0, 1, 4, 7, 7]);
        assert!(matches!(quantize_levels(&[0.3; 5], 7), Err(RegistrationError::Degenerate(_))));
        assert!(unit_normalized(&[2.0; 3]).is_none());
        assert_eq!(unit_normalized(&[1.0, 3.0, 2.0]).unwrap(), vec![0.0, 1.0, 0.5]);
    }
}
