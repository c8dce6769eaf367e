//! The run configuration file.
//!
//! Every section is optional and falls back to the desk-scale defaults
//! below. Validation resolves relative paths against the file's directory,
//! derives unset sub-seeds from the root `seed` and returns a config whose
//! TOML echo validates back to itself.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use comir::data::{AugmentationConfig, LayoutDescriptor};
use comir::encoder::{EncoderConfig, TrainConfig};
use comir::loss::{ActivationDecay, CriticKind, Group};
use comir::nn::OptimizerConfig;
use comir_eval::{EvalProtocol, StrataCounts};
use comir_registration::{Backend, FeatureConfig, IntensityConfig, MIConfig, Method};

use crate::error::{CliError, Result};

/// Environment variable that replaces the root seed.
pub const SEED_ENV: &str = "COMIR_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub train: TrainSection,
    /// Absent: library defaults with whole-degree rotations. Keys missing
    /// from a given section take the library defaults (continuous angles).
    #[serde(default = "default_augmentation")]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub registration: RegistrationSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

/// The library augmentation defaults with whole-degree rotations, as used
/// for single-channel microscopy data.
fn default_augmentation() -> AugmentationConfig {
    AugmentationConfig {
        integer_degrees: true,
        ..AugmentationConfig::default()
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: default_output_dir(),
            dataset: DatasetConfig::default(),
            encoder: EncoderSection::default(),
            train: TrainSection::default(),
            augmentation: default_augmentation(),
            registration: RegistrationSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

/// Training data: a generated two-modality scene or a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// One scene and its noisy intensity inversion.
    Synthetic {
        #[serde(default = "default_train_side")]
        size: usize,
        #[serde(default = "default_noise")]
        noise_sigma: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A layout descriptor; `root` defaults to the descriptor's directory.
    Layout {
        descriptor: PathBuf,
        #[serde(default)]
        root: Option<PathBuf>,
    },
}

fn default_train_side() -> usize {
    256
}

fn default_noise() -> f64 {
    0.05
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            size: default_train_side(),
            noise_sigma: default_noise(),
            seed: None,
        }
    }
}

/// Encoder shape shared by all modalities; input channels come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub out_channels: usize,
    pub first_conv_filters: usize,
    pub growth_rate: usize,
    pub down_blocks: Vec<usize>,
    pub up_blocks: Vec<usize>,
    pub bottleneck_layers: usize,
    pub compression: f64,
    pub dropout: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::desk(1, 1);
        EncoderSection {
            out_channels: d.out_channels,
            first_conv_filters: d.first_conv_filters,
            growth_rate: d.growth_rate,
            down_blocks: d.down_blocks,
            up_blocks: d.up_blocks,
            bottleneck_layers: d.bottleneck_layers,
            compression: d.compression,
            dropout: d.dropout,
        }
    }
}

impl EncoderSection {
    pub fn for_channels(&self, in_channels: usize) -> EncoderConfig {
        EncoderConfig {
            in_channels,
            out_channels: self.out_channels,
            first_conv_filters: self.first_conv_filters,
            growth_rate: self.growth_rate,
            down_blocks: self.down_blocks.clone(),
            up_blocks: self.up_blocks.clone(),
            bottleneck_layers: self.bottleneck_layers,
            compression: self.compression,
            dropout: self.dropout,
        }
    }
}

/// Training hyperparameters; defaults are the biomedical settings at desk
/// scale (batch 8, 200 steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub gradient_norm_clip: f64,
    pub activation_decay: ActivationDecay,
    pub critic: CriticKind,
    pub group: Group,
    pub patch_size: usize,
    /// Model initialization seed; defaults to the root seed.
    pub seed: Option<u64>,
    /// Sampling and augmentation seed; defaults to root seed + 1.
    pub data_seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let b = TrainConfig::biomedical(0);
        TrainSection {
            optimizer: b.optimizer,
            batch_size: 8,
            steps_per_epoch: 20,
            epochs: 10,
            temperature: b.temperature,
            gradient_norm_clip: b.gradient_norm_clip,
            activation_decay: b.activation_decay,
            critic: b.critic,
            group: b.group,
            patch_size: b.patch_size,
            seed: None,
            data_seed: None,
        }
    }
}

impl TrainSection {
    /// Requires resolved seeds.
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            steps_per_epoch: self.steps_per_epoch,
            epochs: self.epochs,
            temperature: self.temperature,
            gradient_norm_clip: self.gradient_norm_clip,
            activation_decay: self.activation_decay,
            critic: self.critic,
            group: self.group,
            patch_size: self.patch_size,
            seed: self.seed.expect("resolved train.seed"),
            data_seed: self.data_seed,
        }
    }
}

/// Which modality of a pair is the fixed (reference) image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
pub enum RefModality {
    #[default]
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
}

impl RefModality {
    pub fn index(self) -> usize {
        match self {
            RefModality::A => 0,
            RefModality::B => 1,
        }
    }
}

/// What the registration backends see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegistrationInputs {
    /// Learnt representations of both images (needs a checkpoint).
    #[default]
    Comir,
    /// The images themselves.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationSection {
    pub methods: Vec<Method>,
    pub inputs: RegistrationInputs,
    pub reference_modality: RefModality,
    /// Seeds per-pair registration randomness; defaults to root seed + 5.
    pub seed: Option<u64>,
    pub mi: MIConfig,
    pub intensity: IntensityConfig,
    pub feature: FeatureConfig,
}

impl Default for RegistrationSection {
    fn default() -> Self {
        RegistrationSection {
            methods: Method::ALL.to_vec(),
            inputs: RegistrationInputs::default(),
            reference_modality: RefModality::default(),
            seed: None,
            mi: MIConfig::default(),
            intensity: IntensityConfig::default(),
            feature: FeatureConfig::default(),
        }
    }
}

impl RegistrationSection {
    pub fn backend(&self, method: Method) -> Backend {
        match method {
            Method::Mi => Backend::Mi(self.mi.clone()),
            Method::Intensity => Backend::Intensity(self.intensity.clone()),
            Method::Feature => Backend::Feature(self.feature.clone()),
        }
    }
}

/// The synthetic evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub pairs: usize,
    pub image_size: usize,
    /// Per-stratum counts; defaults to an even split of `pairs`.
    pub quotas: Option<StrataCounts>,
    pub noise_sigma: f64,
    pub level: f64,
    /// Defaults to root seed + 3.
    pub transform_seed: Option<u64>,
    /// Defaults to root seed + 4.
    pub scene_seed: Option<u64>,
    pub jobs: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            pairs: 50,
            image_size: 256,
            quotas: None,
            noise_sigma: default_noise(),
            level: 0.95,
            transform_seed: None,
            scene_seed: None,
            jobs: 1,
        }
    }
}

impl EvaluationSection {
    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol::scaled_to(self.image_size, self.image_size)
    }
}

fn invalid(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {reason}"))
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Fills derived seeds and absolute paths, then checks every invariant.
    /// `seed_override` replaces the root seed before derivation.
    pub fn resolve(mut self, base_dir: &Path, seed_override: Option<u64>) -> Result<Self> {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        let root = self.seed;
        self.output_dir = resolve_path(base_dir, &self.output_dir);
        match &mut self.dataset {
            DatasetConfig::Synthetic { seed, .. } => {
                seed.get_or_insert(root.wrapping_add(2));
            }
            DatasetConfig::Layout { descriptor, root: data_root } => {
                *descriptor = resolve_path(base_dir, descriptor);
                let dir = descriptor.parent().map(Path::to_path_buf).unwrap_or_default();
                let r = data_root.take().map(|r| resolve_path(base_dir, &r)).unwrap_or(dir);
                *data_root = Some(r);
            }
        }
        self.train.seed.get_or_insert(root);
        self.train.data_seed.get_or_insert(root.wrapping_add(1));
        self.evaluation.transform_seed.get_or_insert(root.wrapping_add(3));
        self.evaluation.scene_seed.get_or_insert(root.wrapping_add(4));
        self.registration.seed.get_or_insert(root.wrapping_add(5));
        let pairs = self.evaluation.pairs;
        self.evaluation.quotas.get_or_insert(StrataCounts::balanced(pairs));
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Synthetic { size, noise_sigma, .. } => {
                if *size < self.train.patch_size {
                    return Err(invalid("dataset.size", format!("{size} is smaller than train.patch_size")));
                }
                if !(*noise_sigma >= 0.0) {
                    return Err(invalid("dataset.noise_sigma", "must be non-negative"));
                }
            }
            DatasetConfig::Layout { descriptor, root } => {
                if !descriptor.is_file() {
                    return Err(invalid("dataset.descriptor", format!("{} does not exist", descriptor.display())));
                }
                let root = root.as_ref().expect("resolved root");
                if !root.is_dir() {
                    return Err(invalid("dataset.root", format!("{} is not a directory", root.display())));
                }
                LayoutDescriptor::load(descriptor).map_err(|e| invalid("dataset.descriptor", e))?;
            }
        }
        let enc = self.encoder.for_channels(1);
        enc.validate().map_err(|e| invalid("encoder", e))?;
        let train = self.train.to_train_config();
        train.validate().map_err(|e| invalid("train", e))?;
        if self.train.patch_size % enc.size_multiple() != 0 {
            return Err(invalid(
                "train.patch_size",
                format!("must be a multiple of {}", enc.size_multiple()),
            ));
        }
        self.augmentation.validate().map_err(|e| invalid("augmentation", e))?;

        let reg = &self.registration;
        if reg.methods.is_empty() {
            return Err(invalid("registration.methods", "at least one method is required"));
        }
        reg.mi.validate().map_err(|e| invalid("registration.mi", e))?;
        reg.intensity.validate().map_err(|e| invalid("registration.intensity", e))?;
        reg.feature.validate().map_err(|e| invalid("registration.feature", e))?;

        let ev = &self.evaluation;
        if ev.image_size < 16 {
            return Err(invalid("evaluation.image_size", "must be at least 16"));
        }
        if reg.inputs == RegistrationInputs::Comir && ev.image_size < enc.size_multiple() {
            return Err(invalid(
                "evaluation.image_size",
                format!("must be at least {} to encode representations", enc.size_multiple()),
            ));
        }
        let quotas = ev.quotas.expect("resolved quotas");
        if quotas.total() != ev.pairs {
            return Err(invalid(
                "evaluation.quotas",
                format!("sum to {} but evaluation.pairs is {}", quotas.total(), ev.pairs),
            ));
        }
        if !(0.0 < ev.level && ev.level < 1.0) {
            return Err(invalid("evaluation.level", "must lie in (0, 1)"));
        }
        if !(ev.noise_sigma >= 0.0) {
            return Err(invalid("evaluation.noise_sigma", "must be non-negative"));
        }
        if ev.jobs == 0 {
            return Err(invalid("evaluation.jobs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Reads, resolves and validates a run configuration file.
pub fn validate_config(path: &Path) -> Result<RunConfig> {
    validate_config_with(path, None)
}

pub fn validate_config_with(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path
        .canonicalize()
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    RunConfig::from_toml(&text)?.resolve(&base, seed_override)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("run.toml");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn empty_config_resolves_to_documented_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = validate_config(&write(dir.path(), "")).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.train.seed, Some(0));
        assert_eq!(cfg.train.data_seed, Some(1));
        assert_eq!(cfg.evaluation.transform_seed, Some(3));
        assert_eq!(cfg.registration.seed, Some(5));
        assert_eq!(cfg.evaluation.quotas, Some(StrataCounts { small: 17, medium: 17, large: 16 }));
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.to_train_config().total_steps(), 200);
        assert_eq!(cfg.registration.mi, MIConfig::default());
        assert!(cfg.augmentation.integer_degrees);
        assert!(cfg.output_dir.is_absolute());
    }

    #[test]
    fn unknown_keys_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = validate_config(&write(dir.path(), "[train]\ntemprature = 0.1\n")).unwrap_err();
        assert!(err.to_string().contains("temprature"), "{err}");
        assert_eq!(err.exit_code(), 2);
        let err = validate_config(&write(dir.path(), "[dataset]\nkind = \"synthetic\"\nsizee = 3\n")).unwrap_err();
        assert!(err.to_string().contains("sizee"), "{err}");
    }

    #[test]
    fn invariant_violations_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        for (text, key) in [
            ("[evaluation]\npairs = 3\nquotas = { small = 1, medium = 1, large = 2 }\n", "evaluation.quotas"),
            ("[registration]\nmethods = []\n", "registration.methods"),
            ("[train]\npatch_size = 100\n", "train.patch_size"),
            ("[dataset]\nkind = \"layout\"\ndescriptor = \"missing.toml\"\n", "dataset.descriptor"),
            ("[registration.mi]\nbins = 1\n", "registration.mi"),
        ] {
            let err = validate_config(&write(dir.path(), text)).unwrap_err();
            assert!(err.to_string().contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn echo_is_a_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let text = "seed = 7\n[train]\nbatch_size = 4\n[registration]\nmethods = [\"feature\"]\n[registration.intensity]\nsquash = \"min_max\"\n";
        let first = validate_config(&write(dir.path(), text)).unwrap();
        let echo = first.to_toml();
        let second = validate_config(&write(dir.path(), &echo)).unwrap();
        assert_eq!(first, second);
        assert_eq!(echo, second.to_toml());
    }

    #[test]
    fn seed_override_moves_derived_seeds_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "seed = 1\n[evaluation]\nscene_seed = 99\n");
        let cfg = validate_config_with(&p, Some(40)).unwrap();
        assert_eq!(cfg.seed, 40);
        assert_eq!(cfg.train.seed, Some(40));
        assert_eq!(cfg.evaluation.scene_seed, Some(99));
    }
}
