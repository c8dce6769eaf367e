use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use comir::imaging::{Image, Point2D, RigidTransform2D};

use crate::error::{RegistrationError, Result};
use crate::features::{register_features, FeatureConfig};
use crate::intensity::{register_intensity, IntensityConfig};
use crate::mi::{register_mi, MIConfig};
use crate::result::{Method, RegistrationResult};

/// A registration method together with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Backend {
    Mi(MIConfig),
    Intensity(IntensityConfig),
    Feature(FeatureConfig),
}

impl Backend {
    pub fn method(&self) -> Method {
        match self {
            Backend::Mi(_) => Method::Mi,
            Backend::Intensity(_) => Method::Intensity,
            Backend::Feature(_) => Method::Feature,
        }
    }

    /// Runs the backend once from `init` (ignored by the feature backend).
    pub fn register<R: Rng + ?Sized>(
        &self,
        reference: &Image,
        floating: &Image,
        rng: &mut R,
        init: &RigidTransform2D,
    ) -> Result<RegistrationResult> {
        match self {
            Backend::Mi(cfg) => register_mi(reference, floating, cfg, rng, init),
            Backend::Intensity(cfg) => register_intensity(reference, floating, cfg, rng, init),
            Backend::Feature(cfg) => register_features(reference, floating, cfg, rng),
        }
    }
}

/// `init` with each rotation (radians) added, pivoting about `center`.
pub fn rotation_starts(init: &RigidTransform2D, rotations: &[f64], center: Point2D) -> Vec<RigidTransform2D> {
    let base = init.with_center(center);
    rotations
        .iter()
        .map(|&r| RigidTransform2D::new(base.angle + r, base.tx, base.ty, center))
        .collect()
}

/// Runs `backend` from every start and keeps the best final objective
/// (lowest distance, highest MI or most inliers); ties go to the earlier
/// start. A single start uses `rng` directly, so it matches a direct call;
/// several starts each get their own generator seeded from `rng` in order.
/// Failed starts are skipped unless all fail.
pub fn register_multistart<R: Rng + ?Sized>(
    backend: &Backend,
    reference: &Image,
    floating: &Image,
    starts: &[RigidTransform2D],
    rng: &mut R,
) -> Result<RegistrationResult> {
    match starts {
        [] => Err(RegistrationError::NoStarts),
        [only] => {
            let mut r = backend.register(reference, floating, rng, only)?;
            r.start_index = Some(0);
            Ok(r)
        }
        _ => {
            let seeds: Vec<u64> = starts.iter().map(|_| rng.random()).collect();
            let mut best: Option<RegistrationResult> = None;
            let mut last_err = None;
            let mut runtime = 0.0;
            for (i, (start, seed)) in starts.iter().zip(seeds).enumerate() {
                match backend.register(reference, floating, &mut ChaCha8Rng::seed_from_u64(seed), start) {
                    Ok(mut r) => {
                        runtime += r.runtime_seconds;
                        r.start_index = Some(i);
                        if best.as_ref().is_none_or(|b| r.score() < b.score()) {
                            best = Some(r);
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match best {
                Some(mut r) => {
                    r.runtime_seconds = runtime;
                    Ok(r)
                }
                None => Err(RegistrationError::AllStartsFailed(Box::new(
                    last_err.expect("at least one start ran"),
                ))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::Squash;
    use crate::test_support::{corner_error, shifted_pair};

    fn raw_intensity() -> Backend {
        Backend::Intensity(IntensityConfig {
            squash: Squash::MinMax,
            ..IntensityConfig::default()
        })
    }

    #[test]
    fn single_start_equals_a_direct_call() {
        let c = Point2D::image_center(96, 96);
        let (reference, floating) = shifted_pair(96, &RigidTransform2D::new(0.05, 4.0, -3.0, c), 2);
        let backend = raw_intensity();
        let init = RigidTransform2D::identity();
        let multi = register_multistart(&backend, &reference, &floating, &[init], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let direct = backend.register(&reference, &floating, &mut ChaCha8Rng::seed_from_u64(5), &init).unwrap();
        assert_eq!(multi.transform, direct.transform);
        assert_eq!(multi.trace, direct.trace);
        assert_eq!(multi.start_index, Some(0));
    }

    #[test]
    fn including_the_truth_never_hurts() {
        let c = Point2D::image_center(96, 96);
        let truth = RigidTransform2D::new(0.5, 10.0, 6.0, c);
        let (reference, floating) = shifted_pair(96, &truth, 4);
        let backend = Backend::Mi(MIConfig::default());
        let single = register_multistart(&backend, &reference, &floating, &[RigidTransform2D::identity()], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let multi = register_multistart(&backend, &reference, &floating, &[RigidTransform2D::identity(), truth], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(multi.objective >= single.objective);
        assert!(corner_error(&truth, &multi.transform, 96, 96) <= corner_error(&truth, &single.transform, 96, 96));
    }

    #[test]
    fn rotational_starts_pick_the_near_basin() {
        let c = Point2D::image_center(128, 128);
        let truth = RigidTransform2D::new(0.28, 0.0, 0.0, c);
        let (reference, floating) = shifted_pair(128, &truth, 14);
        let cfg = IntensityConfig {
            squash: Squash::MinMax,
            ..IntensityConfig::default()
        };
        let starts = rotation_starts(&RigidTransform2D::identity(), &cfg.multistart_rotations, c);
        assert_eq!(starts.len(), 3);
        let backend = Backend::Intensity(cfg);
        let r = register_multistart(&backend, &reference, &floating, &starts, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(corner_error(&truth, &r.transform, 128, 128) < 5.0, "{}", r.transform);
        let from_near = backend
            .register(&reference, &floating, &mut ChaCha8Rng::seed_from_u64(3), &starts[2])
            .unwrap();
        assert!(corner_error(&truth, &from_near.transform, 128, 128) < 5.0);
        assert!(r.objective <= from_near.objective + 1e-3 * from_near.objective.abs().max(1e-6));
    }

    #[test]
    fn empty_and_failing_starts() {
        let img = Image::filled(1, 16, 16, 1.0);
        let backend = raw_intensity();
        assert!(matches!(
            register_multistart(&backend, &img, &img, &[], &mut ChaCha8Rng::seed_from_u64(0)),
            Err(RegistrationError::NoStarts)
        ));
        let two = [RigidTransform2D::identity(); 2];
        assert!(matches!(
            register_multistart(&backend, &img, &img, &two, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(RegistrationError::AllStartsFailed(_))
        ));
    }
}
