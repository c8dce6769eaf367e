//! Evaluation pairs and the per-pair registration loop.
//!
//! A pair is cut from larger source images: the reference is the central
//! `size × size` crop, and the floating image is resampled from the source
//! through the ground-truth transform, so no padding enters either view.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use comir::data::{synthetic_pair, synthetic_scene};
use comir::imaging::{warp, Image, Interpolation, RigidTransform2D};
use comir_registration::{register_multistart, rotation_starts, Backend, Method};

use crate::error::{EvalError, Result};
use crate::metrics::registration_error;
use crate::strata::{EvalProtocol, EvalTransform, Stratum};

#[derive(Debug, Clone)]
pub struct EvalPair {
    pub id: String,
    pub reference: Image,
    pub floating: Image,
    pub truth: EvalTransform,
}

/// Border (px) around a crop that keeps every transformed corner inside the source.
pub fn required_margin(protocol: &EvalProtocol) -> usize {
    protocol.max_displacement().ceil() as usize + 2
}

/// Crops the reference from the center of `reference_source` and resamples
/// the floating view from `floating_source` so that
/// `floating(truth(p)) = floating_source(offset + p)`.
pub fn crop_pair(
    id: impl Into<String>,
    reference_source: &Image,
    floating_source: &Image,
    truth: EvalTransform,
    size: usize,
) -> Result<EvalPair> {
    let id = id.into();
    if !reference_source.same_shape(floating_source) {
        return Err(EvalError::InvalidValue("pair sources differ in shape".into()));
    }
    let (h, w) = (reference_source.height(), reference_source.width());
    if h < size || w < size {
        return Err(EvalError::InvalidValue(format!("{h}x{w} source cannot hold a {size} px crop")));
    }
    let (ox, oy) = ((w - size) / 2, (h - size) / 2);
    let reference = reference_source.crop(ox, oy, size, size)?;
    let to_source = RigidTransform2D::compose(
        &RigidTransform2D::translation(ox as f64, oy as f64),
        &truth.transform.inverse(),
    );
    let warped = warp(floating_source, &to_source, Interpolation::Linear, (size, size));
    if warped.out_of_support_fraction() > 0.0 {
        return Err(EvalError::InvalidValue(format!(
            "pair `{id}`: transformed crop leaves the {h}x{w} source"
        )));
    }
    Ok(EvalPair {
        id,
        reference,
        floating: warped.image,
        truth,
    })
}

/// How the two views of a synthetic pair are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PairSource {
    /// Both views from one scene.
    Monomodal,
    /// One view from a scene, the other from its noisy inversion.
    /// `reference_modality` 0 takes the reference from the scene, 1 from the
    /// inversion.
    Multimodal {
        noise_sigma: f64,
        #[serde(default)]
        reference_modality: usize,
    },
}

/// One synthetic pair per transform, scene seeds drawn from `seed` in order.
pub fn synthetic_eval_pairs(
    transforms: &[EvalTransform],
    protocol: &EvalProtocol,
    seed: u64,
    source: PairSource,
) -> Result<Vec<EvalPair>> {
    let size = protocol.height.min(protocol.width);
    let side = size + 2 * required_margin(protocol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    transforms
        .iter()
        .enumerate()
        .map(|(i, &truth)| {
            let scene_seed: u64 = rng.random();
            let id = format!("pair_{i:03}");
            match source {
                PairSource::Monomodal => {
                    let scene = synthetic_scene(side, side, scene_seed);
                    crop_pair(id, &scene, &scene, truth, size)
                }
                PairSource::Multimodal { noise_sigma, reference_modality } => {
                    let sample = synthetic_pair(&id, side, side, noise_sigma, scene_seed)?;
                    let (r, f) = match reference_modality {
                        0 => (0, 1),
                        1 => (1, 0),
                        m => return Err(EvalError::InvalidValue(format!("reference modality {m} of a two-modality pair"))),
                    };
                    crop_pair(id, &sample.images[r], &sample.images[f], truth, size)
                }
            }
        })
        .collect()
}

/// Outcome of registering one pair with one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub method: Method,
    pub stratum: Stratum,
    pub displacement: f64,
    pub truth: RigidTransform2D,
    pub estimate: Option<RigidTransform2D>,
    /// Corner error in px; `None` when the method declared failure.
    pub error: Option<f64>,
    pub objective: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub start_index: Option<usize>,
    pub trace_len: usize,
    pub trace_first: Option<f64>,
    pub trace_last: Option<f64>,
    pub failure: Option<String>,
    pub seed: u64,
    pub runtime_seconds: f64,
}

impl PairRecord {
    /// Corner error with failures as `+∞`.
    pub fn error_or_inf(&self) -> f64 {
        self.error.unwrap_or(f64::INFINITY)
    }

    pub fn without_timing(mut self) -> Self {
        self.runtime_seconds = 0.0;
        self
    }
}

/// Start transforms per backend: the configured rotations for the intensity
/// backend, the identity otherwise.
pub fn starts_for(backend: &Backend, protocol: &EvalProtocol) -> Vec<RigidTransform2D> {
    match backend {
        Backend::Intensity(cfg) => rotation_starts(&RigidTransform2D::identity(), &cfg.multistart_rotations, protocol.center()),
        _ => vec![RigidTransform2D::identity()],
    }
}

/// Seed of one (pair, method) job; independent of scheduling.
pub fn pair_seed(root: u64, pair_index: usize, method: Method) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    let lane = Method::ALL.iter().position(|m| *m == method).unwrap_or(0) as u64;
    rng.set_stream(pair_index as u64 * Method::ALL.len() as u64 + lane);
    rng.random()
}

pub fn register_pair(pair: &EvalPair, backend: &Backend, protocol: &EvalProtocol, seed: u64) -> PairRecord {
    let starts = starts_for(backend, protocol);
    let outcome = register_multistart(backend, &pair.reference, &pair.floating, &starts, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut record = PairRecord {
        pair_id: pair.id.clone(),
        method: backend.method(),
        stratum: pair.truth.stratum,
        displacement: pair.truth.displacement,
        truth: pair.truth.transform,
        estimate: None,
        error: None,
        objective: None,
        iterations: 0,
        converged: false,
        start_index: None,
        trace_len: 0,
        trace_first: None,
        trace_last: None,
        failure: None,
        seed,
        runtime_seconds: 0.0,
    };
    match outcome {
        Ok(r) => {
            record.error = Some(registration_error(&pair.truth.transform, &r.transform, protocol.height, protocol.width));
            record.estimate = Some(r.transform);
            record.objective = Some(r.objective);
            record.iterations = r.iterations;
            record.converged = r.converged;
            record.start_index = r.start_index;
            record.trace_len = r.trace.len();
            record.trace_first = r.trace.first().copied();
            record.trace_last = r.trace.last().copied();
            record.runtime_seconds = r.runtime_seconds;
        }
        Err(e) => record.failure = Some(e.to_string()),
    }
    record
}

/// Registers every pair, `jobs` pairs at a time. Records come back in pair
/// order and do not depend on `jobs`.
pub fn register_pairs(
    pairs: &[EvalPair],
    backend: &Backend,
    protocol: &EvalProtocol,
    root_seed: u64,
    jobs: usize,
) -> Result<Vec<PairRecord>> {
    let method = backend.method();
    let run = |(i, pair): (usize, &EvalPair)| register_pair(pair, backend, protocol, pair_seed(root_seed, i, method));
    if jobs <= 1 {
        return Ok(pairs.iter().enumerate().map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| EvalError::InvalidValue(format!("worker pool: {e}")))?;
    Ok(pool.install(|| pairs.par_iter().enumerate().map(run).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strata::{generate_eval_transforms, StrataCounts};
    use comir_registration::FeatureConfig;

    fn truth_of(t: RigidTransform2D, protocol: &EvalProtocol) -> EvalTransform {
        let displacement = protocol.displacement(&t);
        EvalTransform {
            transform: t,
            displacement,
            stratum: protocol.thresholds.classify(displacement),
        }
    }

    #[test]
    fn floating_view_satisfies_the_truth_relation() {
        let protocol = EvalProtocol::scaled_to(64, 64);
        let side = 64 + 2 * required_margin(&protocol);
        let source = Image::from_fn(side, side, |y, x| (0.01 * x as f32 + 0.02 * y as f32).sin());
        let t = RigidTransform2D::new(0.2, 5.0, -3.0, protocol.center());
        let pair = crop_pair("p", &source, &source, truth_of(t, &protocol), 64).unwrap();
        let back = warp(&pair.floating, &t, Interpolation::Linear, (64, 64));
        let mut worst = 0.0f32;
        for y in 0..64 {
            for x in 0..64 {
                let q = t.apply(comir::imaging::Point2D::new(x as f64, y as f64));
                if !(1.0..62.0).contains(&q.x) || !(1.0..62.0).contains(&q.y) {
                    continue;
                }
                worst = worst.max((back.image.get(0, y, x) - pair.reference.get(0, y, x)).abs());
            }
        }
        assert!(worst < 0.02, "{worst}");
    }

    #[test]
    fn undersized_sources_are_rejected() {
        let protocol = EvalProtocol::scaled_to(64, 64);
        let source = Image::filled(1, 70, 70, 0.5);
        let t = RigidTransform2D::new(0.5, 0.0, 0.0, protocol.center());
        assert!(crop_pair("p", &source, &source, truth_of(t, &protocol), 64).is_err());
        assert!(crop_pair("p", &source, &source, truth_of(t, &protocol), 80).is_err());
    }

    #[test]
    fn pair_seeds_separate_pairs_and_methods() {
        let a = pair_seed(1, 0, Method::Mi);
        assert_eq!(a, pair_seed(1, 0, Method::Mi));
        assert_ne!(a, pair_seed(1, 1, Method::Mi));
        assert_ne!(a, pair_seed(1, 0, Method::Feature));
        assert_ne!(a, pair_seed(2, 0, Method::Mi));
    }

    #[test]
    fn job_count_does_not_change_records() {
        let protocol = EvalProtocol::scaled_to(256, 256);
        let ts = generate_eval_transforms(3, StrataCounts::balanced(3), &mut ChaCha8Rng::seed_from_u64(5), &protocol).unwrap();
        let pairs = synthetic_eval_pairs(&ts, &protocol, 6, PairSource::Monomodal).unwrap();
        let backend = Backend::Feature(FeatureConfig::default());
        let serial: Vec<_> = register_pairs(&pairs, &backend, &protocol, 7, 1).unwrap().into_iter().map(PairRecord::without_timing).collect();
        let parallel: Vec<_> = register_pairs(&pairs, &backend, &protocol, 7, 2).unwrap().into_iter().map(PairRecord::without_timing).collect();
        assert_eq!(serial, parallel);
        assert!(serial.iter().all(|r| r.error.is_some() || r.failure.is_some()));
    }

    #[test]
    fn multimodal_reference_choice_swaps_views() {
        let protocol = EvalProtocol::scaled_to(64, 64);
        let ts = generate_eval_transforms(1, StrataCounts::balanced(1), &mut ChaCha8Rng::seed_from_u64(1), &protocol).unwrap();
        let src = |m| PairSource::Multimodal { noise_sigma: 0.0, reference_modality: m };
        let a = synthetic_eval_pairs(&ts, &protocol, 2, src(0)).unwrap();
        let b = synthetic_eval_pairs(&ts, &protocol, 2, src(1)).unwrap();
        // noise-free inversion: the swapped reference is the complement
        for (x, y) in a[0].reference.data().iter().zip(b[0].reference.data()) {
            assert!((x + y - 1.0).abs() < 1e-6);
        }
        assert!(synthetic_eval_pairs(&ts, &protocol, 2, src(2)).is_err());
    }
}
