//! The dense U-Net encoder, its training loop, checkpoints and inference.

mod checkpoint;
mod config;
mod infer;
mod train;
mod unet;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, TrainConfig};
pub use infer::{infer_comir, infer_with, visualize, visualize_pair, Representation, VisualizationMode};
pub use train::{train, train_with_progress, HistoryEntry, LossHistory, TrainedModels};
pub use unet::{build_encoder, DenseUNet, Slot};
