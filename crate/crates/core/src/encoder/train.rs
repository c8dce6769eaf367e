//! The training loop: sample a batch, evaluate the routed InfoNCE objective,
//! clip the global gradient norm and take one optimizer step.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{EncoderConfig, TrainConfig};
use super::unet::{build_encoder, DenseUNet};
use crate::data::{sample_batch_with, AugmentationConfig, MultimodalSample};
use crate::error::{ComirError, Result};
use crate::loss::{training_loss, CriticKind, CriticSpec, LossConfig};
use crate::nn::{clip_grad_norm, Optimizer, Param, Tensor};

/// One optimizer step: objective before the update and post-clip gradient norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossHistory(pub Vec<HistoryEntry>);

impl LossHistory {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|e| e.loss)
    }

    /// Mean loss of the last `k` steps (fewer if the history is shorter).
    pub fn tail_mean(&self, k: usize) -> Option<f64> {
        let tail = &self.0[self.0.len().saturating_sub(k)..];
        (!tail.is_empty()).then(|| tail.iter().map(|e| e.loss).sum::<f64>() / tail.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,loss,grad_norm")?;
        for e in &self.0 {
            writeln!(out, "{},{},{}", e.step, e.loss, e.grad_norm)?;
        }
        Ok(())
    }
}

/// Encoders (one per modality, in dataset order) and what produced them.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub models: Vec<DenseUNet>,
    pub modalities: Vec<String>,
    /// Final critic; bilinear weights are trained alongside the encoders.
    pub critic: CriticSpec,
    pub history: LossHistory,
}

/// Trains one encoder per modality on `samples`. See [`train_with_progress`].
pub fn train(
    samples: &[MultimodalSample],
    encoders: &[EncoderConfig],
    cfg: &TrainConfig,
    aug: &AugmentationConfig,
) -> Result<TrainedModels> {
    train_with_progress(samples, encoders, cfg, aug, |_| {})
}

/// Trains for `epochs × steps_per_epoch` steps, calling `progress` after each.
///
/// Model `m` is initialized from `seed + m`; batch sampling, augmentation,
/// rotation draws and dropout masks come from `data_seed`. The run is fully
/// deterministic given both seeds.
pub fn train_with_progress(
    samples: &[MultimodalSample],
    encoders: &[EncoderConfig],
    cfg: &TrainConfig,
    aug: &AugmentationConfig,
    mut progress: impl FnMut(&HistoryEntry),
) -> Result<TrainedModels> {
    cfg.validate()?;
    aug.validate()?;
    let first = samples.first().ok_or(ComirError::EmptyDataset)?;
    let modalities: Vec<String> = first.images.iter().map(|im| im.modality.clone()).collect();
    if encoders.len() != modalities.len() {
        return Err(ComirError::Config(format!(
            "{} encoder configs for {} modalities",
            encoders.len(),
            modalities.len()
        )));
    }
    for s in samples {
        for (m, (img, enc)) in s.images.iter().zip(encoders).enumerate() {
            if img.channels() != enc.in_channels {
                return Err(ComirError::Dataset {
                    sample: s.id.clone(),
                    reason: format!(
                        "modality {m} has {} channels, encoder expects {}",
                        img.channels(),
                        enc.in_channels
                    ),
                });
            }
        }
    }
    let out_channels = encoders[0].out_channels;
    if encoders.iter().any(|e| e.out_channels != out_channels) {
        return Err(ComirError::Config("all encoders must share out_channels".into()));
    }

    let mut models = encoders
        .iter()
        .enumerate()
        .map(|(m, e)| {
            let mut net = build_encoder(e, cfg.seed.wrapping_add(m as u64))?;
            net.reseed_dropout(cfg.data_seed().wrapping_add(0x5851_f42d_4c95_7f2d).wrapping_mul(m as u64 + 1));
            Ok(net)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut critic = match cfg.critic {
        CriticKind::Mse => CriticSpec::mse(),
        CriticKind::Cosine => CriticSpec::cosine(),
        CriticKind::Bilinear => CriticSpec::bilinear_init(out_channels, cfg.seed),
    };
    let mut critic_param = critic
        .bilinear_weights
        .as_ref()
        .map(|w| Param::new(w.iter().map(|&v| v as f32).collect()));
    let loss_cfg = LossConfig {
        temperature: cfg.temperature,
        group: cfg.group,
        modalities: modalities.len(),
    };
    loss_cfg.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed());
    let mut optimizer = Optimizer::new(cfg.optimizer.clone());
    let mut history = LossHistory::default();
    let patch = (cfg.patch_size, cfg.patch_size);

    for step in 0..cfg.total_steps() {
        let batch = sample_batch_with(samples, cfg.batch_size, patch, aug, &mut rng)?;
        let inputs = (0..modalities.len())
            .map(|m| {
                let patches: Vec<_> = batch.iter().map(|t| &t.patches[m]).collect();
                Tensor::from_images(&patches)
            })
            .collect::<Result<Vec<_>>>()?;

        for net in &mut models {
            net.zero_grad();
        }
        if let (Some(p), Some(w)) = (&critic_param, critic.bilinear_weights.as_mut()) {
            for (dst, &src) in w.iter_mut().zip(&p.value) {
                *dst = src as f64;
            }
        }
        let out = training_loss(&mut models, &inputs, &critic, &loss_cfg, cfg.activation_decay, &mut rng, true)?;
        if !out.objective.is_finite() {
            return Err(ComirError::NonFinite(format!(
                "objective {} at step {step} (infonce {}, decay {})",
                out.objective, out.infonce, out.decay
            )));
        }
        if let (Some(p), Some(g)) = (critic_param.as_mut(), out.weight_grad.as_ref()) {
            for (dst, &src) in p.grad.iter_mut().zip(g) {
                *dst = src as f32;
            }
        }

        let mut params: Vec<&mut Param> = models.iter_mut().flat_map(|net| net.params_mut()).collect();
        if let Some(p) = critic_param.as_mut() {
            params.push(p);
        }
        let norm = clip_grad_norm(&mut params, cfg.gradient_norm_clip);
        if !norm.is_finite() {
            return Err(ComirError::NonFinite(format!("gradient norm {norm} at step {step}")));
        }
        optimizer.step(&mut params);

        let entry = HistoryEntry {
            step,
            loss: out.objective,
            grad_norm: norm,
        };
        progress(&entry);
        history.0.push(entry);
    }

    if let (Some(p), Some(w)) = (&critic_param, critic.bilinear_weights.as_mut()) {
        for (dst, &src) in w.iter_mut().zip(&p.value) {
            *dst = src as f64;
        }
    }
    for net in &mut models {
        net.clear_caches();
    }
    Ok(TrainedModels {
        models,
        modalities,
        critic,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_pair;
    use crate::nn::OptimizerConfig;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            in_channels: 1,
            out_channels: 1,
            first_conv_filters: 4,
            growth_rate: 2,
            down_blocks: vec![1, 1],
            up_blocks: vec![1, 1],
            bottleneck_layers: 1,
            compression: 0.75,
            dropout: 0.2,
        }
    }

    fn quick_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerConfig::adam(1e-3, 1e-4),
            batch_size: 4,
            steps_per_epoch: steps,
            epochs: 1,
            patch_size: 16,
            ..TrainConfig::biomedical(7)
        }
    }

    fn data() -> Vec<MultimodalSample> {
        vec![synthetic_pair("a", 48, 48, 0.02, 1).unwrap()]
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig { epochs: 0, ..quick_cfg(5) };
        let mut out = train(&data(), &[tiny(), tiny()], &cfg, &AugmentationConfig::default()).unwrap();
        assert!(out.history.is_empty());
        for (m, net) in out.models.iter_mut().enumerate() {
            let mut init = build_encoder(&tiny(), 7 + m as u64).unwrap();
            assert_eq!(net.parameter_hash(), init.parameter_hash());
        }
    }

    #[test]
    fn runs_are_deterministic_and_clipped() {
        let cfg = quick_cfg(4);
        let encs = [tiny(), tiny()];
        let mut a = train(&data(), &encs, &cfg, &AugmentationConfig::default()).unwrap();
        let mut b = train(&data(), &encs, &cfg, &AugmentationConfig::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.models[1].parameter_hash(), b.models[1].parameter_hash());
        assert_eq!(a.history.len(), 4);
        for e in &a.history.0 {
            assert!(e.loss.is_finite());
            assert!(e.grad_norm <= cfg.gradient_norm_clip + 1e-6, "{e:?}");
        }
        let mut csv = Vec::new();
        a.history.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,loss,grad_norm\n0,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn bilinear_weights_are_trained() {
        let cfg = TrainConfig { critic: CriticKind::Bilinear, ..quick_cfg(3) };
        let out = train(&data(), &[tiny(), tiny()], &cfg, &AugmentationConfig::none()).unwrap();
        let init = CriticSpec::bilinear_init(1, 7);
        assert_ne!(out.critic.bilinear_weights, init.bilinear_weights);
    }

    #[test]
    fn input_errors() {
        let cfg = quick_cfg(1);
        let aug = AugmentationConfig::default();
        assert!(matches!(train(&[], &[tiny(), tiny()], &cfg, &aug), Err(ComirError::EmptyDataset)));
        assert!(train(&data(), &[tiny()], &cfg, &aug).is_err());
        let three = EncoderConfig { in_channels: 3, ..tiny() };
        assert!(matches!(train(&data(), &[three, tiny()], &cfg, &aug), Err(ComirError::Dataset { .. })));
        let small = TrainConfig { batch_size: 1, ..cfg };
        assert!(matches!(train(&data(), &[tiny(), tiny()], &small, &aug), Err(ComirError::BatchTooSmall(1))));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let cfg = TrainConfig { temperature: 1e-300, ..quick_cfg(3) };
        let err = train(&data(), &[tiny(), tiny()], &cfg, &AugmentationConfig::none()).unwrap_err();
        assert!(matches!(err, ComirError::NonFinite(_)), "{err}");
    }
}
