use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use comir::data::synthetic_scene;
use comir::imaging::io::save_png8;
use comir_cli::manifest::Manifest;
use comir_cli::validate_config;

const TINY: &str = r#"
seed = 11
output_dir = "out"

[dataset]
kind = "synthetic"
size = 64

[encoder]
first_conv_filters = 4
growth_rate = 2
down_blocks = [1, 1]
up_blocks = [1, 1]
bottleneck_layers = 1

[train]
batch_size = 2
steps_per_epoch = 2
epochs = 1
patch_size = 32

[registration]
inputs = "raw"
methods = ["mi"]

[registration.mi]
max_iterations = 40

[evaluation]
pairs = 4
image_size = 64
"#;

fn comir(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_comir"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("COMIR_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn config_in(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_checkpoint_loss_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), TINY);
    let dir = run_dir(&comir(&["train", "--config", s(&cfg)], &[]));
    assert!(dir.ends_with("train-11-0"));
    for f in ["checkpoint.bin", "loss.csv", "config.toml", "timing.csv", "manifest.json"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let loss = fs::read_to_string(dir.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3, "{loss}");

    let manifest = Manifest::load(&dir).unwrap();
    assert_eq!(manifest.seeds["train"], 11);
    assert!(manifest.outputs.iter().any(|o| o.path == Path::new("checkpoint.bin")));
    assert_eq!(manifest.inputs.len(), 1);

    // the echoed config validates back to the run's config
    let echoed = validate_config(&dir.join("config.toml")).unwrap();
    assert_eq!(echoed, validate_config(&cfg).unwrap());

    // inputs are untouched and a second run gets a new directory
    let again = run_dir(&comir(&["train", "--config", s(&cfg)], &[]));
    assert!(again.ends_with("train-11-1"));
    assert_eq!(fs::read(dir.join("checkpoint.bin")).unwrap(), fs::read(again.join("checkpoint.bin")).unwrap());

    // inference and equivariance on the trained checkpoint
    let images = tmp.path().join("images");
    fs::create_dir(&images).unwrap();
    let scene = synthetic_scene(32, 32, 3);
    let scaled = scene.with_data(1, 32, 32, scene.data().iter().map(|v| v * 255.0).collect());
    save_png8(&scaled, &images.join("a.png")).unwrap();
    let ckpt = dir.join("checkpoint.bin");
    let out = tmp.path().join("runs");
    let inferred = run_dir(&comir(
        &["infer", "--checkpoint", s(&ckpt), "--input", s(&images), "--output", s(&out)],
        &[],
    ));
    assert!(inferred.join("a.npy").is_file() && inferred.join("a.png").is_file());
    let eq = run_dir(&comir(
        &[
            "equivariance",
            "--checkpoint",
            s(&ckpt),
            "--image",
            s(&images.join("a.png")),
            "--step",
            "90",
            "--output",
            s(&out),
        ],
        &[],
    ));
    let curve = fs::read_to_string(eq.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 5, "{curve}");
}

#[test]
fn register_without_checkpoint_for_comir_inputs_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), &TINY.replace("inputs = \"raw\"", "inputs = \"comir\""));
    let out = comir(&["register", "--config", s(&cfg), "--method", "mi", "--ref-modality", "A"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--checkpoint"), "{err}");
    assert!(!tmp.path().join("out").exists(), "a failed guard must not create a run");
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "[train]\ntemprature = 0.3\n");
    let out = comir(&["train", "--config", s(&cfg)], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("temprature"));
}

#[test]
fn evaluating_the_same_records_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), TINY);
    let reg = run_dir(&comir(&["register", "--config", s(&cfg), "--ref-modality", "B"], &[]));
    assert!(reg.join("records/mi.json").is_file());
    let a = run_dir(&comir(&["evaluate", "--results", s(&reg)], &[]));
    let b = run_dir(&comir(&["evaluate", "--results", s(&reg)], &[]));
    assert_ne!(a, b);
    for f in ["summary.json", "summary.csv", "pairs.csv", "ecdf_mi.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pairs"], 4);
    assert!(!fs::read_to_string(a.join("summary.json")).unwrap().contains("seconds"));
}

#[test]
fn seed_environment_variable_replaces_the_root_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), TINY);
    let reg = run_dir(&comir(&["register", "--config", s(&cfg)], &[("COMIR_SEED", "5")]));
    assert!(reg.ends_with("register-5-0"));
    let m = Manifest::load(&reg).unwrap();
    assert_eq!(m.seeds["registration"], 10);
}

#[test]
fn missing_results_directory_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = comir(&["evaluate", "--results", s(&tmp.path().join("nope"))], &[]);
    assert_eq!(out.status.code(), Some(2));
}
