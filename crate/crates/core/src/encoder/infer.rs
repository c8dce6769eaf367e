//! Full-image inference and 8-bit rendering of representations.

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::unet::DenseUNet;
use crate::error::{ComirError, Result};
use crate::imaging::Image;
use crate::stats::quantile;

/// A dense representation of one image, tagged with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    /// `c × h × w` values with the input's spatial size.
    pub image: Image,
    pub modality: String,
    pub checkpoint_id: String,
}

/// Encodes `img`, a preprocessed image of modality `modality`.
pub fn infer_comir(ckpt: &Checkpoint, modality: &str, img: &Image) -> Result<Representation> {
    let m = ckpt.modality_index(modality)?;
    let mut net = ckpt.encoder(m)?;
    infer_with(&mut net, ckpt, modality, img)
}

/// As [`infer_comir`], reusing an encoder already rebuilt from `ckpt`.
pub fn infer_with(net: &mut DenseUNet, ckpt: &Checkpoint, modality: &str, img: &Image) -> Result<Representation> {
    ckpt.modality_index(modality)?;
    if img.channels() != net.config().in_channels {
        return Err(ComirError::ShapeMismatch(format!(
            "`{modality}` encoder expects {} channels, image has {}",
            net.config().in_channels,
            img.channels()
        )));
    }
    let out = net.forward_image(img)?;
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(ComirError::NonFinite(format!("representation of a `{modality}` image")));
    }
    Ok(Representation {
        image: out.with_modality(modality),
        modality: modality.to_string(),
        checkpoint_id: ckpt.id().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VisualizationMode {
    /// `255·σ(v/T)`, for 1-channel representations.
    Logistic { temperature: f64 },
    /// Linear stretch between the 1st and 99th percentiles, for 3-channel
    /// representations; see [`visualize_pair`] for joint normalization.
    JointPercentile,
}

/// Maps representation values to integers in `[0, 255]` (stored as `f32`).
/// Rounding is half-to-even.
pub fn visualize(rep: &Image, mode: VisualizationMode) -> Image {
    match mode {
        VisualizationMode::Logistic { temperature } => rep.map(|v| {
            let s = 1.0 / (1.0 + (-(v as f64) / temperature).exp());
            (255.0 * s).round_ties_even() as f32
        }),
        VisualizationMode::JointPercentile => {
            let (lo, hi) = percentile_envelope(rep);
            stretch(rep, lo, hi)
        }
    }
}

/// Normalizes two corresponding representations jointly: the range runs
/// from the larger of their 1st percentiles to the smaller of their 99th.
pub fn visualize_pair(a: &Image, b: &Image) -> (Image, Image) {
    let (lo_a, hi_a) = percentile_envelope(a);
    let (lo_b, hi_b) = percentile_envelope(b);
    let (lo, hi) = (lo_a.max(lo_b), hi_a.min(hi_b));
    (stretch(a, lo, hi), stretch(b, lo, hi))
}

fn percentile_envelope(img: &Image) -> (f64, f64) {
    let values: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    (quantile(&values, 0.01), quantile(&values, 0.99))
}

fn stretch(img: &Image, lo: f64, hi: f64) -> Image {
    let span = hi - lo;
    img.map(|v| {
        let t = if span > 0.0 { ((v as f64 - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        (255.0 * t).round_ties_even() as f32
    })
}
