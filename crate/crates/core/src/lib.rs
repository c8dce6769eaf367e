//! Contrastive multimodal image representations (CoMIRs).
//!
//! One fully convolutional encoder per modality is trained on aligned image
//! pairs with an InfoNCE objective whose positives are routed through random
//! quarter-turn rotations, which makes the learnt dense representations
//! rotation equivariant. Registration backends then operate on the
//! representations as if the problem were monomodal.
//!
//! Module map:
//! - [`imaging`]: rasters, rigid transforms, exact C4 actions, warps, I/O.
//! - [`data`]: dataset layouts, preprocessing, patch sampling, augmentation.
//! - [`loss`]: critics, similarity matrix, M-modality InfoNCE, C4 routing.
//! - [`nn`]: the small CPU tensor/layer toolkit the encoder is built from.
//! - [`encoder`]: dense U-Net, training loop, checkpoints, inference.
//! - [`equivariance`]: rotation-correlation curves and reproducibility reports.
//! - [`stats`]: Pearson correlation, quantiles, empirical bootstrap.

pub mod data;
pub mod encoder;
pub mod equivariance;
mod error;
pub mod imaging;
pub mod loss;
pub mod nn;
pub mod stats;

pub use error::{ComirError, Result};
