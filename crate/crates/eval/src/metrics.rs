//! Corner-displacement error, empirical CDFs and thresholded success counts.

use serde::{Deserialize, Serialize};

use comir::imaging::{Point2D, RigidTransform2D};

use crate::error::{EvalError, Result};

/// Errors at or above this many pixels count as failed registrations.
pub const FAILURE_THRESHOLD_PX: f64 = 100.0;

/// Mean Euclidean distance between `t_true(C)` and `t_est(C)` over the four
/// image corners `C`. Both transforms map reference coordinates to floating
/// coordinates.
pub fn registration_error(t_true: &RigidTransform2D, t_est: &RigidTransform2D, height: usize, width: usize) -> f64 {
    Point2D::image_corners(height, width)
        .iter()
        .map(|&c| t_true.apply(c).distance(&t_est.apply(c)))
        .sum::<f64>()
        / 4.0
}

/// Empirical CDF of registration errors; failures are stored as `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ECDFCurve {
    pub errors: Vec<f64>,
    pub fractions: Vec<f64>,
    pub threshold: f64,
    /// Side length used to express errors relative to the patch size.
    pub scale: Option<f64>,
}

impl ECDFCurve {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// Fraction of errors `≤ x`.
    pub fn at(&self, x: f64) -> f64 {
        let k = self.errors.partition_point(|&e| e <= x);
        k as f64 / self.len() as f64
    }

    /// Fraction of errors strictly below the threshold.
    pub fn success_fraction(&self) -> f64 {
        let k = self.errors.partition_point(|&e| e < self.threshold);
        k as f64 / self.len() as f64
    }

    /// Step points `(error, fraction)` below the display threshold.
    pub fn display_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.errors
            .iter()
            .zip(&self.fractions)
            .take_while(|(e, _)| **e < self.threshold)
            .map(|(&e, &f)| (e, f))
    }

    pub fn with_scale(mut self, side: f64) -> Self {
        self.scale = Some(side);
        self
    }
}

/// Builds the eCDF; `fractions[i] = (i + 1) / N` at the sorted errors.
pub fn ecdf(errors: &[f64], threshold: f64) -> Result<ECDFCurve> {
    if errors.is_empty() {
        return Err(EvalError::EmptyInput("eCDF of no errors".into()));
    }
    if let Some(bad) = errors.iter().find(|e| e.is_nan() || **e < 0.0) {
        return Err(EvalError::InvalidValue(format!("registration error {bad}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let fractions = (1..=sorted.len()).map(|i| i as f64 / n).collect();
    Ok(ECDFCurve {
        errors: sorted,
        fractions,
        threshold,
        scale: None,
    })
}

/// One success threshold and how many errors fall strictly below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCount {
    pub label: String,
    pub bound_px: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCounts {
    pub n: usize,
    pub thresholds: Vec<ThresholdCount>,
}

/// Pixel bounds `⌈1% side⌉`, `⌈5% side⌉` and the absolute failure threshold.
pub fn success_bounds(side: usize) -> [(String, f64); 3] {
    let pct = |p: f64| (side as f64 * p / 100.0).ceil();
    [
        ("lt_1pct".to_string(), pct(1.0)),
        ("lt_5pct".to_string(), pct(5.0)),
        ("lt_100px".to_string(), FAILURE_THRESHOLD_PX),
    ]
}

/// Counts errors strictly below each bound of [`success_bounds`].
pub fn success_counts(errors: &[f64], side: usize) -> SuccessCounts {
    let thresholds = success_bounds(side)
        .into_iter()
        .map(|(label, bound_px)| ThresholdCount {
            count: errors.iter().filter(|&&e| e < bound_px).count(),
            label,
            bound_px,
        })
        .collect();
    SuccessCounts {
        n: errors.len(),
        thresholds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corners(h: usize, w: usize) -> [(f64, f64); 4] {
        let (x1, y1) = ((w - 1) as f64, (h - 1) as f64);
        [(0.0, 0.0), (x1, 0.0), (x1, y1), (0.0, y1)]
    }

    fn brute_error(a: &RigidTransform2D, b: &RigidTransform2D, h: usize, w: usize) -> f64 {
        let mut total = 0.0;
        for (x, y) in corners(h, w) {
            let p = a.apply(Point2D::new(x, y));
            let q = b.apply(Point2D::new(x, y));
            total += (p.x - q.x).hypot(p.y - q.y);
        }
        total / 4.0
    }

    #[test]
    fn identical_transforms_have_zero_error() {
        let t = RigidTransform2D::new(0.3, 4.0, -2.0, Point2D::image_center(50, 50));
        assert_eq!(registration_error(&t, &t, 50, 50), 0.0);
    }

    #[test]
    fn translation_error_is_its_magnitude() {
        let e = registration_error(&RigidTransform2D::identity(), &RigidTransform2D::translation(30.0, 40.0), 834, 834);
        assert!((e - 50.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_about_center_matches_chord_length() {
        let c = Point2D::image_center(834, 834);
        let rot = RigidTransform2D::new(30f64.to_radians(), 0.0, 0.0, c);
        let r = (416.5f64 * 416.5 * 2.0).sqrt();
        let chord = 2.0 * r * 15f64.to_radians().sin();
        let e = registration_error(&RigidTransform2D::identity(), &rot, 834, 834);
        assert!((e - chord).abs() < 1e-9, "{e} vs {chord}");
        assert!((e - brute_error(&RigidTransform2D::identity(), &rot, 834, 834)).abs() < 1e-9);
    }

    #[test]
    fn single_zero_error_jumps_to_one() {
        let c = ecdf(&[0.0], 100.0).unwrap();
        assert_eq!(c.at(-1e-9), 0.0);
        assert_eq!(c.at(0.0), 1.0);
        assert_eq!(c.success_fraction(), 1.0);
    }

    #[test]
    fn failures_beyond_threshold_reduce_success() {
        let c = ecdf(&[10.0, 10.0, 200.0], 100.0).unwrap();
        assert!((c.success_fraction() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.display_points().count(), 2);
        let with_failure = ecdf(&[1.0, f64::INFINITY], 100.0).unwrap();
        assert_eq!(with_failure.success_fraction(), 0.5);
    }

    #[test]
    fn empty_and_invalid_errors_are_rejected() {
        assert!(ecdf(&[], 100.0).is_err());
        assert!(ecdf(&[-1.0], 100.0).is_err());
        assert!(ecdf(&[f64::NAN], 100.0).is_err());
    }

    #[test]
    fn paper_side_gives_nine_and_forty_two_pixels() {
        let b = success_bounds(834);
        assert_eq!(b[0].1, 9.0);
        assert_eq!(b[1].1, 42.0);
        assert_eq!(b[2].1, 100.0);
        let counts = success_counts(&[0.0; 7], 834);
        assert!(counts.thresholds.iter().all(|t| t.count == 7));
        let strict = success_counts(&[9.0, 8.99, 42.0, 41.99, 100.0], 834);
        let c: Vec<usize> = strict.thresholds.iter().map(|t| t.count).collect();
        assert_eq!(c, vec![1, 3, 4]);
    }

    proptest! {
        #[test]
        fn error_matches_brute_force_and_ignores_corner_order(
            a1 in -3.2f64..3.2, x1 in -80.0f64..80.0, y1 in -80.0f64..80.0,
            a2 in -3.2f64..3.2, x2 in -80.0f64..80.0, y2 in -80.0f64..80.0,
            h in 2usize..400, w in 2usize..400,
        ) {
            let c = Point2D::image_center(h, w);
            let t = RigidTransform2D::new(a1, x1, y1, c);
            let e = RigidTransform2D::new(a2, x2, y2, Point2D::new(0.0, 0.0));
            let ours = registration_error(&t, &e, h, w);
            prop_assert!((ours - brute_error(&t, &e, h, w)).abs() < 1e-9);
            let reversed: f64 = corners(h, w).iter().rev().map(|&(x, y)| {
                t.apply(Point2D::new(x, y)).distance(&e.apply(Point2D::new(x, y)))
            }).sum::<f64>() / 4.0;
            prop_assert!((ours - reversed).abs() < 1e-9);
        }

        #[test]
        fn pure_translation_error_is_exact(x in -500.0f64..500.0, y in -500.0f64..500.0) {
            let e = registration_error(&RigidTransform2D::identity(), &RigidTransform2D::translation(x, y), 256, 256);
            prop_assert!((e - x.hypot(y)).abs() < 1e-9);
        }

        #[test]
        fn ecdf_matches_sort_and_count(errs in proptest::collection::vec(0.0f64..300.0, 1..60), probe in 0.0f64..300.0) {
            let c = ecdf(&errs, 100.0).unwrap();
            prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
            let below = errs.iter().filter(|&&e| e <= probe).count() as f64 / errs.len() as f64;
            prop_assert_eq!(c.at(probe), below);
            let ok = errs.iter().filter(|&&e| e < 100.0).count() as f64 / errs.len() as f64;
            prop_assert_eq!(c.success_fraction(), ok);
        }

        #[test]
        fn success_counts_match_a_brute_count(errs in proptest::collection::vec(0.0f64..150.0, 0..60), side in 50usize..1200) {
            let counts = success_counts(&errs, side);
            for t in &counts.thresholds {
                let mut brute = 0;
                for &e in &errs {
                    if e < t.bound_px { brute += 1; }
                }
                prop_assert_eq!(t.count, brute);
            }
        }
    }
}
