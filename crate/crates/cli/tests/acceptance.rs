//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! `ACCEPTANCE_ONLY=1,8` restricts the run to the listed criteria. All seeds
//! are fixed below and were chosen before the suite was first run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use comir::data::{synthetic_pair, synthetic_scene, AugmentationConfig, MultimodalSample};
use comir::encoder::{infer_comir, train, Checkpoint, EncoderConfig, TrainConfig};
use comir::equivariance::{checkpoint_equivariance_curve, representation_correlation, EquivarianceCurve};
use comir::imaging::{Point2D, RigidTransform2D};
use comir::loss::{infonce_loss, infonce_loss_and_grad, CriticSpec, Group, LatentBatch, LatentShape};
use comir::stats::spearman;
use comir_eval::{
    clopper_pearson, ecdf, generate_eval_transforms, register_pairs, registration_error, synthetic_eval_pairs,
    wilcoxon_signed_rank, EvalProtocol, PairRecord, PairSource, StrataCounts, Stratum, FAILURE_RANK_VALUE,
};
use comir_registration::{Backend, FeatureConfig, IntensityConfig, MIConfig};

/// Training image shared by every desk-scale training.
const FIXTURE_SEED: u64 = 2019;
const FIXTURE_SIDE: usize = 256;
const FIXTURE_NOISE: f64 = 0.05;
/// Registration set: transforms, scenes, per-pair registration seeds.
const TRANSFORM_SEED: u64 = 2020;
const SCENE_SEED: u64 = 2021;
const REGISTRATION_SEED: u64 = 2022;
/// Training run of the loss-convergence criterion (init, data).
const CONVERGENCE_SEEDS: (u64, u64) = (2023, 2024);
/// C4 model and its unconstrained twin (init, data).
const EQUIVARIANT_SEEDS: (u64, u64) = (2025, 2026);
/// Same init as the C4 model, another data stream.
const REPEAT_DATA_SEED: u64 = 2027;
/// Init seeds of the models compared against the C4 model.
const OTHER_INIT_SEEDS: [u64; 4] = [2028, 2029, 2030, 2031];
const HELD_OUT_EQUIVARIANCE: u64 = 2040;
const HELD_OUT_REPRODUCIBILITY: [u64; 3] = [2041, 2042, 2043];
const HELD_OUT_SIDE: usize = 128;
const BOOTSTRAP_SEED: u64 = 2050;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn within_runtime(outcome: Outcome, seconds: f64, limit: f64) -> Outcome {
    let ok = seconds <= limit;
    Outcome::new(
        outcome.pass && ok,
        format!("{}; runtime {seconds:.1} s (limit {limit:.0} s)", outcome.detail),
    )
}

// ---------------------------------------------------------------- losses

fn loss_closed_form() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for n in [2usize, 4, 8] {
        // identical latents make every similarity equal
        let z = vec![vec![0.3, -0.7, 1.1]; 2 * n];
        let batch = LatentBatch::new(2, n, LatentShape::flat(3), z).unwrap();
        for spec in [CriticSpec::mse(), CriticSpec::cosine(), CriticSpec::bilinear_init(3, 1)] {
            let l = infonce_loss(&batch, &spec, 0.5).unwrap();
            worst = worst.max((l - ((2 * n - 1) as f64).ln()).abs());
        }
    }
    within_runtime(
        Outcome::new(worst <= 1e-9, format!("max |L − log(2n−1)| = {worst:.2e} over n ∈ {{2,4,8}}, 3 critics")),
        t.elapsed().as_secs_f64(),
        1.0,
    )
}

fn loss_gradient() -> Outcome {
    let t = Instant::now();
    let shape = LatentShape::new(3, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let tau = 0.5;
    let h = 1e-5;
    let mut report = Vec::new();
    let mut pass = true;
    for (name, spec) in [
        ("mse", CriticSpec::mse()),
        ("cosine", CriticSpec::cosine()),
        ("bilinear", CriticSpec::bilinear_init(3, 2)),
    ] {
        let batch = LatentBatch::new(2, 2, shape, z.clone()).unwrap();
        let analytic = infonce_loss_and_grad(&batch, &spec, tau).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..z.len() {
            for k in 0..3 {
                let shifted = |d: f64| {
                    let mut zz = z.clone();
                    zz[i][k] += d;
                    infonce_loss(&LatentBatch::new(2, 2, shape, zz).unwrap(), &spec, tau).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let an = analytic.latent_grads[i][k];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8));
            }
        }
        pass &= worst <= 1e-4;
        report.push(format!("{name} {worst:.1e}"));
    }
    within_runtime(
        Outcome::new(pass, format!("12-element batch, worst relative error: {}", report.join(", "))),
        t.elapsed().as_secs_f64(),
        10.0,
    )
}

// ---------------------------------------------------------------- training

fn fixture() -> MultimodalSample {
    synthetic_pair("fixture", FIXTURE_SIDE, FIXTURE_SIDE, FIXTURE_NOISE, FIXTURE_SEED).unwrap()
}

fn desk_train_config(seeds: (u64, u64), patch: usize, group: Group) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        steps_per_epoch: 200,
        epochs: 1,
        patch_size: patch,
        group,
        data_seed: Some(seeds.1),
        ..TrainConfig::biomedical(seeds.0)
    }
}

/// A trained desk model and its wall-clock training time.
fn train_desk(seeds: (u64, u64), patch: usize, group: Group) -> (Checkpoint, f64) {
    let t = Instant::now();
    let cfg = desk_train_config(seeds, patch, group);
    let encoders = vec![EncoderConfig::desk(1, 1); 2];
    let mut trained = train(&[fixture()], &encoders, &cfg, &AugmentationConfig::default()).unwrap();
    let ckpt = Checkpoint::from_trained(&mut trained, &cfg).unwrap();
    (ckpt, t.elapsed().as_secs_f64())
}

fn training_converges() -> Outcome {
    let (ckpt, seconds) = train_desk(CONVERGENCE_SEEDS, 128, Group::C4);
    let n = 8.0f64;
    let bound = 0.5 * (2.0 * n - 1.0).ln();
    let tail = ckpt.history.tail_mean(20).unwrap_or(f64::INFINITY);
    let first = ckpt.history.0.first().map(|e| e.loss).unwrap_or(f64::NAN);
    within_runtime(
        Outcome::new(
            tail < bound,
            format!("128² patches, n=8, 200 steps: first loss {first:.3}, last-20 mean {tail:.3} < {bound:.3}"),
        ),
        seconds,
        600.0,
    )
}

fn curve_line(curve: &EquivarianceCurve) -> String {
    curve
        .angles
        .iter()
        .zip(&curve.correlations)
        .map(|(a, c)| format!("{a:.0}:{c:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

struct Models {
    equivariant: Checkpoint,
    equivariant_seconds: f64,
}

fn equivariance(models: &mut Option<Models>) -> Outcome {
    let (c4, c4_seconds) = train_desk(EQUIVARIANT_SEEDS, 64, Group::C4);
    let (twin, twin_seconds) = train_desk(EQUIVARIANT_SEEDS, 64, Group::Trivial);
    let t = Instant::now();
    let img = synthetic_scene(HELD_OUT_SIDE, HELD_OUT_SIDE, HELD_OUT_EQUIVARIANCE).with_modality("m1");
    let c4_curve = checkpoint_equivariance_curve(&c4, "m1", &img, 15.0).unwrap();
    let twin_curve = checkpoint_equivariance_curve(&twin, "m1", &img, 15.0).unwrap();
    println!("    C4 curve:      {}", curve_line(&c4_curve));
    println!("    trivial curve: {}", curve_line(&twin_curve));
    let (c4_45, twin_45) = (c4_curve.at(45.0).unwrap(), twin_curve.at(45.0).unwrap());
    let pass = c4_curve.min() >= 0.8 && twin_45 < c4_45;
    let seconds = c4_seconds + twin_seconds + t.elapsed().as_secs_f64();
    *models = Some(Models {
        equivariant: c4,
        equivariant_seconds: c4_seconds,
    });
    within_runtime(
        Outcome::new(
            pass,
            format!(
                "C4 min over 15° steps {:.3} ≥ 0.8; at 45° trivial {twin_45:.4} < C4 {c4_45:.4}",
                c4_curve.min()
            ),
        ),
        seconds,
        900.0,
    )
}

/// Mean over held-out images of the mean pairwise correlation between the
/// `m1` representations of `models`, with the per-image pair values pooled.
fn held_out_correlation(models: &[&Checkpoint]) -> (f64, Vec<f64>) {
    let mut pooled = Vec::new();
    for seed in HELD_OUT_REPRODUCIBILITY {
        let img = synthetic_scene(HELD_OUT_SIDE, HELD_OUT_SIDE, seed).with_modality("m1");
        let reps: Vec<_> = models.iter().map(|m| infer_comir(m, "m1", &img).unwrap()).collect();
        pooled.extend(representation_correlation(&reps, BOOTSTRAP_SEED).unwrap().pair_values);
    }
    (pooled.iter().sum::<f64>() / pooled.len() as f64, pooled)
}

fn reproducibility(models: &mut Option<Models>) -> Outcome {
    let t = Instant::now();
    let (base, base_seconds) = match models.take() {
        Some(m) => (m.equivariant, m.equivariant_seconds),
        None => train_desk(EQUIVARIANT_SEEDS, 64, Group::C4),
    };
    let (repeat, _) = train_desk((EQUIVARIANT_SEEDS.0, REPEAT_DATA_SEED), 64, Group::C4);
    let others: Vec<Checkpoint> = OTHER_INIT_SEEDS.iter().map(|&s| train_desk((s, s + 100), 64, Group::C4).0).collect();

    let (same, same_values) = held_out_correlation(&[&base, &repeat]);
    let mut random_init: Vec<&Checkpoint> = vec![&base];
    random_init.extend(others.iter());
    let (different, different_values) = held_out_correlation(&random_init);
    let spread = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("[{lo:.3}, {hi:.3}]")
    };
    let seconds = base_seconds + t.elapsed().as_secs_f64();
    within_runtime(
        Outcome::new(
            same >= 0.9 && different <= 0.5,
            format!(
                "same init seed: {same:.3} ≥ 0.9 (range {}); {} different init seeds: mean pairwise {different:.3} ≤ 0.5 (range {})",
                spread(&same_values),
                random_init.len(),
                spread(&different_values)
            ),
        ),
        seconds,
        1200.0,
    )
}

// ---------------------------------------------------------------- registration

struct RegistrationRun {
    feature: Vec<PairRecord>,
    intensity: Vec<PairRecord>,
    mi: Vec<PairRecord>,
    seconds: f64,
}

fn run_registration() -> RegistrationRun {
    let t = Instant::now();
    let protocol = EvalProtocol::scaled_to(256, 256);
    let mut rng = ChaCha8Rng::seed_from_u64(TRANSFORM_SEED);
    let transforms = generate_eval_transforms(50, StrataCounts::balanced(50), &mut rng, &protocol).unwrap();
    let pairs = synthetic_eval_pairs(&transforms, &protocol, SCENE_SEED, PairSource::Monomodal).unwrap();
    let run = |backend: Backend| register_pairs(&pairs, &backend, &protocol, REGISTRATION_SEED, 1).unwrap();
    let feature = run(Backend::Feature(FeatureConfig::default()));
    let intensity = run(Backend::Intensity(IntensityConfig::default()));
    let mi = run(Backend::Mi(MIConfig::default()));
    RegistrationRun {
        feature,
        intensity,
        mi,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn count_below(records: &[&PairRecord], bound: f64) -> usize {
    records.iter().filter(|r| r.error.is_some_and(|e| e < bound)).count()
}

fn registration_recovery(run: &RegistrationRun) -> Outcome {
    let feature: Vec<&PairRecord> = run.feature.iter().collect();
    let intensity: Vec<&PairRecord> = run.intensity.iter().collect();
    let small: Vec<&PairRecord> = run.mi.iter().filter(|r| r.stratum == Stratum::Small).collect();
    let (f, i, m) = (count_below(&feature, 2.0), count_below(&intensity, 5.0), count_below(&small, 5.0));
    let pass = f as f64 >= 0.9 * feature.len() as f64
        && i as f64 >= 0.8 * intensity.len() as f64
        && m as f64 >= 0.8 * small.len() as f64;
    within_runtime(
        Outcome::new(
            pass,
            format!(
                "feature < 2 px: {f}/{} (≥ 90%); intensity multistart < 5 px: {i}/{} (≥ 80%); MI small stratum < 5 px: {m}/{} (≥ 80%)",
                feature.len(),
                intensity.len(),
                small.len()
            ),
        ),
        run.seconds,
        600.0,
    )
}

fn error_displacement_rho(records: &[PairRecord]) -> f64 {
    let errors: Vec<f64> = records.iter().map(|r| r.error.unwrap_or(FAILURE_RANK_VALUE)).collect();
    let displacement: Vec<f64> = records.iter().map(|r| r.displacement).collect();
    spearman(&errors, &displacement).unwrap()
}

fn displacement_dependence(run: &RegistrationRun) -> Outcome {
    let mi = error_displacement_rho(&run.mi);
    let feature = error_displacement_rho(&run.feature);
    Outcome::new(
        mi > 0.4 && feature.abs() < 0.2,
        format!("Spearman(error, displacement): MI {mi:.3} > 0.4; feature {feature:.3}, |ρ| < 0.2"),
    )
}

// ---------------------------------------------------------------- metric oracles

fn metric_oracles() -> Outcome {
    let t = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    // corner error against an explicit rotation-matrix evaluation
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (180usize, 240usize);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut draw = || {
            RigidTransform2D::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-80.0..80.0),
                rng.random_range(-80.0..80.0),
                Point2D::new(rng.random_range(0.0..240.0), rng.random_range(0.0..180.0)),
            )
        };
        let (a, b) = (draw(), draw());
        let map = |t: &RigidTransform2D, x: f64, y: f64| {
            let (s, c) = t.angle.sin_cos();
            let (dx, dy) = (x - t.center.x, y - t.center.y);
            (c * dx - s * dy + t.center.x + t.tx, s * dx + c * dy + t.center.y + t.ty)
        };
        let corners = [(0.0, 0.0), (w as f64 - 1.0, 0.0), (0.0, h as f64 - 1.0), (w as f64 - 1.0, h as f64 - 1.0)];
        let brute = corners
            .iter()
            .map(|&(x, y)| {
                let (p, q) = (map(&a, x, y), map(&b, x, y));
                ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
            })
            .sum::<f64>()
            / 4.0;
        worst = worst.max((registration_error(&a, &b, h, w) - brute).abs());
    }
    pass &= worst <= 1e-9;
    notes.push(format!("corner error vs brute force {worst:.1e}"));

    // eCDF against sorting and counting
    let errors: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..150.0)).collect();
    let curve = ecdf(&errors, 100.0).unwrap();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let ecdf_ok = curve.errors == sorted
        && [0.0, 10.0, 42.0, 99.9, 149.0, 200.0]
            .iter()
            .all(|&x| curve.at(x) == errors.iter().filter(|&&e| e <= x).count() as f64 / errors.len() as f64);
    pass &= ecdf_ok;
    notes.push(format!("eCDF sort-and-count {}", if ecdf_ok { "equal" } else { "differs" }));

    // the 7/134 anchor
    let ci = clopper_pearson(7, 134, 0.95).unwrap();
    let cp_ok = (ci.count_lo, ci.count_hi) == (3, 14);
    pass &= cp_ok;
    notes.push(format!("Clopper-Pearson 7/134 → [{}; {}]", ci.count_lo, ci.count_hi));

    // signed-rank p-value against all 2⁶ sign patterns
    let a = [1.0, 2.5, 4.0, 3.0, 7.0, 0.5];
    let b = [2.0, 1.0, 6.5, 5.5, 8.0, 3.0];
    let test = wilcoxon_signed_rank(&a, &b).unwrap();
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let ranks: Vec<f64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let tied = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let center = ranks.iter().sum::<f64>() / 2.0;
    let extreme = (0..64u32)
        .filter(|mask| {
            let wp: f64 = (0..6).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            (wp - center).abs() >= (observed - center).abs() - 1e-12
        })
        .count();
    let p_enum = extreme as f64 / 64.0;
    let w_ok = (test.p_value - p_enum).abs() < 1e-12 && test.w_plus == observed;
    pass &= w_ok;
    notes.push(format!("Wilcoxon n=6 p {:.5} vs enumeration {p_enum:.5}", test.p_value));

    within_runtime(Outcome::new(pass, notes.join("; ")), t.elapsed().as_secs_f64(), 60.0)
}

// ---------------------------------------------------------------- determinism

const REPRODUCE_CONFIG: &str = r#"
seed = 2060
output_dir = "runs"

[dataset]
kind = "synthetic"
size = 96

[encoder]
first_conv_filters = 8
growth_rate = 4
down_blocks = [1, 1, 1, 1]
up_blocks = [1, 1, 1, 1]
bottleneck_layers = 1

[train]
batch_size = 4
steps_per_epoch = 5
epochs = 2
patch_size = 64

[evaluation]
pairs = 6
image_size = 128
"#;

fn reproduce_run(config: &Path) -> Result<PathBuf, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_comir"))
        .args(["reproduce", "--config", config.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .env_remove("COMIR_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(PathBuf::from(String::from_utf8_lossy(&out.stdout).trim()))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("reproduce.toml");
    fs::write(&config, REPRODUCE_CONFIG).unwrap();
    match (reproduce_run(&config), reproduce_run(&config)) {
        (Ok(a), Ok(b)) => {
            let (ja, jb) = (fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
            let same = ja == jb && a != b;
            Outcome::new(
                same,
                format!(
                    "two `reproduce` runs ({} and {}): summary.json {} ({} bytes)",
                    a.file_name().unwrap().to_string_lossy(),
                    b.file_name().unwrap().to_string_lossy(),
                    if ja == jb { "byte-identical" } else { "differs" },
                    ja.len()
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => Outcome::new(false, format!("reproduce failed: {e}")),
    }
}

// ---------------------------------------------------------------- driver

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: u32| only.as_ref().is_none_or(|o| o.contains(&k));

    let mut failures = 0;
    let mut report = |k: u32, title: &str, outcome: Outcome| {
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        if !outcome.pass {
            failures += 1;
        }
        println!("{tag} criterion {k} ({title}): {}", outcome.detail);
    };

    if wanted(1) {
        report(1, "loss closed form", loss_closed_form());
    }
    if wanted(2) {
        report(2, "loss gradient", loss_gradient());
    }
    if wanted(8) {
        report(8, "metric oracles", metric_oracles());
    }
    if wanted(6) || wanted(7) {
        let run = run_registration();
        if wanted(6) {
            report(6, "registration recovery", registration_recovery(&run));
        }
        if wanted(7) {
            report(7, "error vs displacement", displacement_dependence(&run));
        }
    }
    if wanted(9) {
        report(9, "reproduce determinism", determinism());
    }
    if wanted(3) {
        report(3, "desk-scale training", training_converges());
    }
    let mut models = None;
    if wanted(4) {
        report(4, "equivariance", equivariance(&mut models));
    }
    if wanted(5) {
        report(5, "reproducibility", reproducibility(&mut models));
    }

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all selected acceptance criteria passed");
}
