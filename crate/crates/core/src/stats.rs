//! Small statistics toolkit: Pearson/Spearman correlation, quantiles and the
//! empirical (basic) bootstrap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ComirError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    ClopperPearson,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub method: IntervalMethod,
    pub level: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pearson correlation coefficient of two equally long samples.
///
/// Errors on length mismatch, fewer than two values, or when either input is
/// constant (the coefficient is undefined).
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ComirError::ShapeMismatch(format!(
            "pearson on lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(ComirError::InsufficientData("pearson needs at least 2 values".into()));
    }
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(ComirError::Degenerate("pearson of a constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn pearson_f32(a: &[f32], b: &[f32]) -> Result<f64> {
    let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    pearson(&a, &b)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Linear-interpolation quantile of an already sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Empirical (basic) bootstrap interval for the mean.
///
/// With `m` the sample mean and `q_lo, q_hi` the `(1±level)/2` quantiles of
/// the resampled means, the interval is `[2m − q_hi, 2m − q_lo]`.
pub fn bootstrap_ci<R: Rng + ?Sized>(
    values: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<IntervalEstimate> {
    if values.len() < 2 {
        return Err(ComirError::InsufficientData(format!(
            "bootstrap needs at least 2 values, got {}",
            values.len()
        )));
    }
    if resamples < 1000 {
        return Err(ComirError::InsufficientData(format!(
            "bootstrap needs at least 1000 resamples, got {resamples}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(ComirError::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let n = values.len();
    let m = mean(values);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let q_lo = quantile_sorted(&means, alpha / 2.0);
    let q_hi = quantile_sorted(&means, 1.0 - alpha / 2.0);
    Ok(IntervalEstimate {
        point: m,
        lo: 2.0 * m - q_hi,
        hi: 2.0 * m - q_lo,
        method: IntervalMethod::Bootstrap,
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textbook_pearson(a: &[f64], b: &[f64]) -> f64 {
        // n Σxy − Σx Σy over sqrt((n Σx² − (Σx)²)(n Σy² − (Σy)²))
        let n = a.len() as f64;
        let sx: f64 = a.iter().sum();
        let sy: f64 = b.iter().sum();
        let sxy: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let sxx: f64 = a.iter().map(|x| x * x).sum();
        let syy: f64 = b.iter().map(|y| y * y).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
    }

    #[test]
    fn pearson_self_and_negation() {
        let a = [0.3, 1.2, -0.7, 4.0, 2.2];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_matches_textbook_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = a.iter().map(|x| x * 0.5 + rng.random::<f64>()).collect();
            assert!((pearson(&a, &b).unwrap() - textbook_pearson(&a, &b)).abs() < 1e-10);
        }
    }

    #[test]
    fn pearson_rejects_constant_and_mismatched() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_of_monotone_map_is_one() {
        let a = [1.0, 5.0, 2.0, 8.0, 3.0];
        let b: Vec<f64> = a.iter().map(|v: &f64| v.powi(3)).collect();
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn bootstrap_of_constant_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ci = bootstrap_ci(&[0.4; 10], 0.95, 2000, &mut rng).unwrap();
        assert!((ci.lo - 0.4).abs() < 1e-12 && (ci.hi - 0.4).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_two_point_matches_exhaustive_distribution() {
        // Resampled means of {0, 1} with n=2 take 0, 0.5, 1 with prob 1/4, 1/2, 1/4.
        // 95% envelope: q(0.025) = 0, q(0.975) = 1, so the basic interval is [0, 1].
        // 40% envelope: q(0.3) = q(0.7) = 0.5, so the interval collapses to [0.5, 0.5].
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ci = bootstrap_ci(&[0.0, 1.0], 0.95, 100_000, &mut rng).unwrap();
        assert!((ci.lo - 0.0).abs() < 1e-9 && (ci.hi - 1.0).abs() < 1e-9);
        let ci = bootstrap_ci(&[0.0, 1.0], 0.40, 100_000, &mut rng).unwrap();
        assert!((ci.lo - 0.5).abs() < 1e-9 && (ci.hi - 0.5).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_widens_with_level_and_is_seeded() {
        let values: Vec<f64> = (0..30).map(|i| ((i * 7919) % 31) as f64 / 31.0).collect();
        let width = |level: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let ci = bootstrap_ci(&values, level, 5000, &mut rng).unwrap();
            assert!(ci.lo <= ci.point && ci.point <= ci.hi);
            ci.hi - ci.lo
        };
        let (w90, w95, w99) = (width(0.90), width(0.95), width(0.99));
        assert!(w90 < w95 && w95 < w99);
        let a = bootstrap_ci(&values, 0.95, 2000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = bootstrap_ci(&values, 0.95, 2000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bootstrap_rejects_small_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(bootstrap_ci(&[1.0], 0.95, 2000, &mut rng).is_err());
        assert!(bootstrap_ci(&[1.0, 2.0], 0.95, 10, &mut rng).is_err());
    }
}
