//! Routing of training batches through random quarter-turns.
//!
//! Each patch is rotated by a drawn element `g` before encoding and the
//! representation is rotated back by `g⁻¹`, so matched pairs are compared in
//! the canonical orientation and the loss rewards rotation-equivariant
//! encoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::critic::{CriticSpec, LatentShape};
use super::infonce::{infonce_loss, infonce_loss_and_grad, Group, LatentBatch, LossConfig};
use crate::error::{ComirError, Result};
use crate::imaging::{C4Element, Image};
use crate::nn::Tensor;

/// A trainable batch-to-batch map (one per modality).
pub trait BatchEncoder {
    /// Encodes `x` (`n × c_in × h × w`). In training mode the call caches
    /// what [`BatchEncoder::backward`] needs.
    fn encode(&mut self, x: &Tensor, train: bool) -> Result<Tensor>;

    /// Accumulates parameter gradients for the last training-mode `encode`.
    fn backward(&mut self, grad: &Tensor) -> Result<()>;
}

/// `rotate(model(rotate(x, g)), g⁻¹)` in evaluation mode.
pub fn equivariant_latent<E: BatchEncoder + ?Sized>(model: &mut E, x: &Image, g: C4Element) -> Result<Image> {
    if !x.is_square() {
        return Err(ComirError::NonSquare {
            height: x.height(),
            width: x.width(),
        });
    }
    let mut t = Tensor::from_images(&[x])?;
    t.rotate_item_c4(0, g);
    let mut y = model.encode(&t, false)?;
    y.rotate_item_c4(0, g.inverse());
    let mut out = y.to_image(0)?;
    out.modality = x.modality.clone();
    Ok(out)
}

/// L1/L2 penalties on the representation values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationDecay {
    #[serde(default)]
    pub l1: f64,
    #[serde(default)]
    pub l2: f64,
}

impl ActivationDecay {
    /// `l1·mean|y| + l2·mean(y²)`.
    pub fn value(&self, y: &[f32]) -> f64 {
        if self.l1 == 0.0 && self.l2 == 0.0 {
            return 0.0;
        }
        let n = y.len() as f64;
        let (a, s) = y
            .iter()
            .fold((0.0, 0.0), |(a, s), &v| (a + (v as f64).abs(), s + (v as f64) * (v as f64)));
        self.l1 * a / n + self.l2 * s / n
    }

    fn grad(&self, y: f32, n: f64) -> f64 {
        let y = y as f64;
        (self.l1 * y.signum() * (y != 0.0) as u8 as f64 + 2.0 * self.l2 * y) / n
    }
}

/// Outcome of one objective evaluation.
#[derive(Debug, Clone)]
pub struct StepLoss {
    /// InfoNCE plus activation decay.
    pub objective: f64,
    pub infonce: f64,
    pub decay: f64,
    /// Draws, modality-major (`m·N + k`).
    pub draws: Vec<C4Element>,
    pub weight_grad: Option<Vec<f64>>,
}

/// Evaluates the training objective on one batch and optionally backpropagates
/// into every model.
///
/// `inputs[m]` holds the `N` patches of modality `m`; tuple `k` is item `k` of
/// every input. With the C4 group every patch gets an independent draw from
/// `rng`; with the trivial group no randomness is consumed.
pub fn training_loss<E: BatchEncoder, R: Rng + ?Sized>(
    models: &mut [E],
    inputs: &[Tensor],
    spec: &CriticSpec,
    cfg: &LossConfig,
    decay: ActivationDecay,
    rng: &mut R,
    backprop: bool,
) -> Result<StepLoss> {
    cfg.validate()?;
    if models.len() != cfg.modalities || inputs.len() != cfg.modalities {
        return Err(ComirError::ShapeMismatch(format!(
            "{} models and {} inputs for {} modalities",
            models.len(),
            inputs.len(),
            cfg.modalities
        )));
    }
    let n = inputs[0].n;
    if n < 2 {
        return Err(ComirError::BatchTooSmall(n));
    }
    if inputs.iter().any(|t| t.n != n) {
        return Err(ComirError::ShapeMismatch("modalities disagree on batch size".into()));
    }
    let draws: Vec<C4Element> = (0..cfg.modalities * n)
        .map(|_| match cfg.group {
            Group::C4 => C4Element::new(rng.random_range(0..4)),
            Group::Trivial => C4Element::IDENTITY,
        })
        .collect();
    if let Some(t) = inputs.iter().find(|t| t.h != t.w) {
        if draws.iter().any(|g| !g.is_identity()) {
            return Err(ComirError::NonSquare { height: t.h, width: t.w });
        }
    }

    let mut outputs = Vec::with_capacity(cfg.modalities);
    for (m, (model, x)) in models.iter_mut().zip(inputs).enumerate() {
        let mut x = x.clone();
        for k in 0..n {
            x.rotate_item_c4(k, draws[m * n + k]);
        }
        let mut y = model.encode(&x, backprop)?;
        for k in 0..n {
            y.rotate_item_c4(k, draws[m * n + k].inverse());
        }
        if !y.is_finite() {
            return Err(ComirError::NonFinite(format!("encoder output of modality {m}")));
        }
        outputs.push(y);
    }
    let first = &outputs[0];
    let shape = LatentShape::new(first.c, first.h, first.w);
    if outputs.iter().any(|y| (y.c, y.h, y.w) != (first.c, first.h, first.w)) {
        return Err(ComirError::ShapeMismatch("modalities produce different representation shapes".into()));
    }
    let z = outputs
        .iter()
        .flat_map(|y| (0..n).map(move |k| y.item(k).iter().map(|&v| v as f64).collect()))
        .collect();
    let batch = LatentBatch::new(cfg.modalities, n, shape, z)?;
    let decay_value: f64 = outputs.iter().map(|y| decay.value(&y.data)).sum();

    if !backprop {
        let infonce = infonce_loss(&batch, spec, cfg.temperature)?;
        return Ok(StepLoss {
            objective: infonce + decay_value,
            infonce,
            decay: decay_value,
            draws,
            weight_grad: None,
        });
    }

    let lg = infonce_loss_and_grad(&batch, spec, cfg.temperature)?;
    for (m, (model, y)) in models.iter_mut().zip(&outputs).enumerate() {
        let count = y.data.len() as f64;
        let mut grad = Tensor::zeros(y.n, y.c, y.h, y.w);
        for k in 0..n {
            let lat = &lg.latent_grads[m * n + k];
            let yk = y.item(k);
            for (i, g) in grad.item_mut(k).iter_mut().enumerate() {
                *g = (lat[i] + decay.grad(yk[i], count)) as f32;
            }
            grad.rotate_item_c4(k, draws[m * n + k]);
        }
        model.backward(&grad)?;
    }
    Ok(StepLoss {
        objective: lg.loss + decay_value,
        infonce: lg.loss,
        decay: decay_value,
        draws,
        weight_grad: lg.weight_grad,
    })
}
