//! Rotation-equivariance curves and reproducibility correlation reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Checkpoint, Representation};
use crate::error::{ComirError, Result};
use crate::imaging::{rotate_about_center, rotate_c4, C4Element, Image, Interpolation};
use crate::stats::{bootstrap_ci, pearson};

/// Correlation between stabilized and unrotated representations per angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceCurve {
    /// Degrees in `[0, 360)`, strictly increasing.
    pub angles: Vec<f64>,
    pub correlations: Vec<f64>,
}

impl EquivarianceCurve {
    pub fn at(&self, degrees: f64) -> Option<f64> {
        self.angles
            .iter()
            .position(|&a| (a - degrees).abs() < 1e-9)
            .map(|i| self.correlations[i])
    }

    pub fn min(&self) -> f64 {
        self.correlations.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `angle,correlation` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle,correlation\n");
        for (a, c) in self.angles.iter().zip(&self.correlations) {
            out.push_str(&format!("{a},{c}\n"));
        }
        out
    }
}

/// Row-major mask of the square inscribed in the largest centered disc.
pub fn inscribed_square_mask(height: usize, width: usize) -> Vec<bool> {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let half = cx.min(cy) / std::f64::consts::SQRT_2;
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (x as f64 - cx).abs() <= half && (y as f64 - cy).abs() <= half))
        .collect()
}

/// Pearson correlation over the masked pixels of all channels jointly.
pub fn masked_pearson(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    if !a.same_shape(b) || mask.len() != a.plane_len() {
        return Err(ComirError::ShapeMismatch("masked correlation of differently shaped images".into()));
    }
    let pick = |img: &Image| -> Vec<f64> {
        (0..img.channels())
            .flat_map(|c| {
                img.plane(c)
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| v as f64)
            })
            .collect()
    };
    pearson(&pick(a), &pick(b))
}

/// For each angle `θ = 0, step, 2·step, …` below 360°: rotates the input by
/// `θ`, encodes it, rotates the output back by `−θ` and correlates it with the
/// representation of the unrotated input over [`inscribed_square_mask`].
/// Multiples of 90° use exact pixel permutations; other angles use linear
/// interpolation about the center.
pub fn equivariance_curve(
    mut forward: impl FnMut(&Image) -> Result<Image>,
    img: &Image,
    step_degrees: f64,
) -> Result<EquivarianceCurve> {
    if !img.is_square() {
        return Err(ComirError::NonSquare {
            height: img.height(),
            width: img.width(),
        });
    }
    let steps = 360.0 / step_degrees;
    if !(step_degrees > 0.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(ComirError::Config(format!("step {step_degrees}° does not divide 360°")));
    }
    let reference = forward(img)?;
    let mask = inscribed_square_mask(reference.height(), reference.width());
    let mut angles = Vec::new();
    let mut correlations = Vec::new();
    for i in 0..steps.round() as usize {
        let deg = i as f64 * step_degrees;
        let quarter = deg / 90.0;
        let stabilized = if (quarter - quarter.round()).abs() < 1e-12 {
            let g = C4Element::new(quarter.round() as i64);
            rotate_c4(&forward(&rotate_c4(img, g))?, g.inverse())
        } else {
            let theta = deg.to_radians();
            let rotated = rotate_about_center(img, theta, Interpolation::Linear).image;
            rotate_about_center(&forward(&rotated)?, -theta, Interpolation::Linear).image
        };
        angles.push(deg);
        correlations.push(masked_pearson(&stabilized, &reference, &mask)?);
    }
    Ok(EquivarianceCurve { angles, correlations })
}

/// [`equivariance_curve`] for the `modality` encoder stored in `ckpt`.
pub fn checkpoint_equivariance_curve(
    ckpt: &Checkpoint,
    modality: &str,
    img: &Image,
    step_degrees: f64,
) -> Result<EquivarianceCurve> {
    let mut net = ckpt.encoder(ckpt.modality_index(modality)?)?;
    equivariance_curve(|x| net.forward_image(x), img, step_degrees)
}

/// Mean pairwise correlation with a bootstrap interval over the pair set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub pairs: usize,
    /// Correlation of every unordered pair `(i, j)`, `i < j`, in lexicographic order.
    pub pair_values: Vec<f64>,
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Correlates every unordered pair of representations of the same image
/// (raw channels, no permutation matching) and reports the mean with a 95%
/// empirical-bootstrap interval from `seed`.
pub fn pairwise_correlation_experiment(comirs: &[Image], seed: u64) -> Result<CorrelationReport> {
    pairwise_correlation_at(comirs, 0.95, seed)
}

/// As [`pairwise_correlation_experiment`] at an arbitrary confidence level.
pub fn pairwise_correlation_at(comirs: &[Image], level: f64, seed: u64) -> Result<CorrelationReport> {
    if comirs.len() < 2 {
        return Err(ComirError::InsufficientData(format!(
            "need at least 2 representations, got {}",
            comirs.len()
        )));
    }
    if comirs.iter().any(|c| !c.same_shape(&comirs[0])) {
        return Err(ComirError::ShapeMismatch("representations differ in shape".into()));
    }
    let values: Vec<Vec<f64>> = comirs
        .iter()
        .map(|c| c.data().iter().map(|&v| v as f64).collect())
        .collect();
    let mut pair_values = Vec::new();
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            pair_values.push(pearson(&values[i], &values[j])?);
        }
    }
    let mean = pair_values.iter().sum::<f64>() / pair_values.len() as f64;
    let (ci_lo, ci_hi) = if pair_values.len() == 1 {
        (mean, mean)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ci = bootstrap_ci(&pair_values, level, BOOTSTRAP_RESAMPLES, &mut rng)?;
        (ci.lo, ci.hi)
    };
    Ok(CorrelationReport {
        mean,
        ci_lo,
        ci_hi,
        level,
        pairs: pair_values.len(),
        pair_values,
    })
}

/// [`pairwise_correlation_experiment`] over inferred representations.
pub fn representation_correlation(reps: &[Representation], seed: u64) -> Result<CorrelationReport> {
    let images: Vec<Image> = reps.iter().map(|r| r.image.clone()).collect();
    pairwise_correlation_experiment(&images, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_scene;
    use crate::imaging::gaussian_blur;

    fn smooth_scene() -> Image {
        gaussian_blur(&synthetic_scene(96, 96, 11), 1.5)
    }

    #[test]
    fn identity_model_calibrates_the_mask() {
        let img = smooth_scene();
        let curve = equivariance_curve(|x| Ok(x.clone()), &img, 15.0).unwrap();
        assert_eq!(curve.angles.len(), 24);
        assert!(curve.angles.windows(2).all(|w| w[0] < w[1]));
        for (a, c) in curve.angles.iter().zip(&curve.correlations) {
            if a % 90.0 == 0.0 {
                assert!((c - 1.0).abs() < 1e-12, "{a}: {c}");
            } else {
                assert!(*c >= 0.99, "{a}: {c}");
            }
        }
        let csv = curve.to_csv();
        assert!(csv.starts_with("angle,correlation\n0,"));
        assert_eq!(csv.lines().count(), 25);
    }

    #[test]
    fn non_equivariant_model_loses_correlation() {
        // a fixed horizontal ramp added to the output breaks rotation symmetry
        let img = smooth_scene();
        let curve = equivariance_curve(
            |x| Ok(Image::from_fn(x.height(), x.width(), |u, v| x.get(0, v, u) + u as f32 * 0.02)),
            &img,
            90.0,
        )
        .unwrap();
        assert!((curve.at(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(curve.at(180.0).unwrap() < 0.9);
    }

    #[test]
    fn curve_preconditions() {
        let img = smooth_scene();
        assert!(equivariance_curve(|x| Ok(x.clone()), &img, 7.0).is_err());
        let rect = Image::zeros(1, 8, 10);
        assert!(matches!(
            equivariance_curve(|x| Ok(x.clone()), &rect, 90.0),
            Err(ComirError::NonSquare { .. })
        ));
    }

    #[test]
    fn mask_is_the_inscribed_square() {
        let m = inscribed_square_mask(11, 11);
        // center 5, half side 5/√2 ≈ 3.54 → columns 2..=8
        let row5: Vec<bool> = m[5 * 11..6 * 11].to_vec();
        assert_eq!(row5.iter().filter(|&&b| b).count(), 7);
        assert!(!row5[1] && row5[2] && row5[8] && !row5[9]);
        assert!(!m[11 + 5]);
    }

    #[test]
    fn identical_copies_give_unit_report() {
        let img = smooth_scene();
        let r = pairwise_correlation_experiment(&[img.clone(), img.clone(), img], 0).unwrap();
        assert_eq!(r.pairs, 3);
        assert!((r.mean - 1.0).abs() < 1e-12);
        assert!((r.ci_lo - 1.0).abs() < 1e-12 && (r.ci_hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_way_report_matches_enumeration() {
        let a = synthetic_scene(20, 20, 1);
        let b = synthetic_scene(20, 20, 2);
        let c = a.map(|v| v * v);
        let r = pairwise_correlation_experiment(&[a.clone(), b.clone(), c.clone()], 5).unwrap();
        let p = |x: &Image, y: &Image| crate::stats::pearson_f32(x.data(), y.data()).unwrap();
        let expect = [p(&a, &b), p(&a, &c), p(&b, &c)];
        for (got, want) in r.pair_values.iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((r.mean - expect.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        assert!(r.ci_lo <= r.mean && r.mean <= r.ci_hi);
        assert_eq!(r, pairwise_correlation_experiment(&[a, b, c], 5).unwrap());
    }

    #[test]
    fn intervals_widen_with_confidence() {
        let imgs: Vec<Image> = (0..6).map(|s| synthetic_scene(16, 16, s)).collect();
        let widths: Vec<f64> = [0.90, 0.95, 0.99]
            .iter()
            .map(|&l| {
                let r = pairwise_correlation_at(&imgs, l, 3).unwrap();
                r.ci_hi - r.ci_lo
            })
            .collect();
        assert!(widths[0] < widths[1] && widths[1] < widths[2], "{widths:?}");
    }

    #[test]
    fn report_errors() {
        let a = Image::zeros(1, 4, 4);
        assert!(pairwise_correlation_experiment(std::slice::from_ref(&a), 0).is_err());
        assert!(matches!(
            pairwise_correlation_experiment(&[a, Image::zeros(1, 4, 5)], 0),
            Err(ComirError::ShapeMismatch(_))
        ));
    }
}
