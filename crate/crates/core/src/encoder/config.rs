use serde::{Deserialize, Serialize};

use crate::error::{ComirError, Result};
use crate::loss::{ActivationDecay, CriticKind, Group};
use crate::nn::OptimizerConfig;

/// Dense U-Net hyperparameters. Pooling is 2×2 max, upsampling is bilinear
/// interpolation and the head has no activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub first_conv_filters: usize,
    /// Channels added by every dense layer.
    pub growth_rate: usize,
    /// Dense-layer counts of the down path, outermost level first.
    pub down_blocks: Vec<usize>,
    /// Dense-layer counts of the up path, innermost level first.
    pub up_blocks: Vec<usize>,
    pub bottleneck_layers: usize,
    pub compression: f64,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 1,
            out_channels: 1,
            first_conv_filters: 32,
            growth_rate: 16,
            down_blocks: vec![6; 4],
            up_blocks: vec![6; 4],
            bottleneck_layers: 4,
            compression: 0.75,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    /// A reduced network for single-core desk runs: same topology, fewer
    /// and narrower layers.
    pub fn desk(in_channels: usize, out_channels: usize) -> Self {
        EncoderConfig {
            in_channels,
            out_channels,
            first_conv_filters: 16,
            growth_rate: 8,
            down_blocks: vec![2; 4],
            up_blocks: vec![2; 4],
            bottleneck_layers: 2,
            compression: 0.75,
            dropout: 0.2,
        }
    }

    pub fn levels(&self) -> usize {
        self.down_blocks.len()
    }

    /// Spatial sides must be multiples of this; smaller inputs are rejected.
    pub fn size_multiple(&self) -> usize {
        1 << self.levels()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ComirError::Config(msg));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("in_channels and out_channels must be at least 1".into());
        }
        if self.first_conv_filters == 0 || self.growth_rate == 0 {
            return bad("first_conv_filters and growth_rate must be positive".into());
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression {} outside (0, 1]", self.compression));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.down_blocks.len() != self.up_blocks.len() {
            return bad(format!(
                "{} down blocks but {} up blocks",
                self.down_blocks.len(),
                self.up_blocks.len()
            ));
        }
        if self.levels() > 8 {
            return bad("at most 8 resolution levels".into());
        }
        if self.down_blocks.iter().chain(&self.up_blocks).any(|&d| d == 0) || self.bottleneck_layers == 0 {
            return bad("every dense block needs at least one layer".into());
        }
        let mut c = self.first_conv_filters;
        for &d in &self.down_blocks {
            c = ((c + d * self.growth_rate) as f64 * self.compression).floor() as usize;
            if c == 0 {
                return bad("compression leaves a transition with zero channels".into());
            }
        }
        Ok(())
    }

    /// Conservative radius (in input pixels) beyond which a pixel cannot
    /// influence an output pixel.
    pub fn receptive_radius(&self) -> usize {
        let mut r = 1; // first conv
        for (l, &d) in self.down_blocks.iter().enumerate() {
            r += d << l; // 3×3 convs at stride 2^l
            r += 1 << l; // pooling window
        }
        r += self.bottleneck_layers << self.levels();
        for (i, &d) in self.up_blocks.iter().enumerate() {
            let l = self.levels() - 1 - i;
            r += 1 << (l + 1); // bilinear taps at the coarser grid
            r += d << l;
        }
        r
    }
}

/// Training-run hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub temperature: f64,
    #[serde(default = "default_clip")]
    pub gradient_norm_clip: f64,
    #[serde(default)]
    pub activation_decay: ActivationDecay,
    pub critic: CriticKind,
    #[serde(default)]
    pub group: Group,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    /// Seeds model initialization.
    pub seed: u64,
    /// Seeds batch sampling, augmentation, rotation draws and dropout;
    /// defaults to `seed`.
    #[serde(default)]
    pub data_seed: Option<u64>,
}

fn default_clip() -> f64 {
    1.0
}

fn default_patch() -> usize {
    128
}

impl TrainConfig {
    /// Settings used for the biomedical (1-channel CoMIR) models.
    pub fn biomedical(seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::sgd(1e-2, 1e-5, 0.9),
            batch_size: 32,
            steps_per_epoch: 32,
            epochs: 23,
            temperature: 0.5,
            gradient_norm_clip: 1.0,
            activation_decay: ActivationDecay { l1: 1e-4, l2: 1e-4 },
            critic: CriticKind::Mse,
            group: Group::C4,
            patch_size: 128,
            seed,
            data_seed: None,
        }
    }

    /// Settings used for the remote-sensing (3-channel CoMIR) models.
    pub fn remote_sensing(seed: u64) -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::adam(1e-3, 1e-4),
            batch_size: 24,
            steps_per_epoch: 32,
            epochs: 5,
            temperature: 0.1,
            gradient_norm_clip: 1.0,
            activation_decay: ActivationDecay::default(),
            critic: CriticKind::Mse,
            group: Group::C4,
            patch_size: 128,
            seed,
            data_seed: None,
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ComirError::Config(msg));
        let lr = self.optimizer.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {lr}"));
        }
        if self.batch_size < 2 {
            return Err(ComirError::BatchTooSmall(self.batch_size));
        }
        if !(self.gradient_norm_clip > 0.0) {
            return bad("gradient_norm_clip must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.patch_size == 0 {
            return bad("patch_size must be positive".into());
        }
        Ok(())
    }
}
