//! Dataset ingestion, modality preprocessing, aligned patch sampling and
//! augmentation, plus a procedural fixture generator.

mod layout;
mod patch;
mod sample;
mod synthetic;

pub use layout::{load_dataset, wildcard_capture, LayoutDescriptor, LayoutKind, ModalityDescriptor};
pub use patch::{
    extract_patch, photometric_augment, sample_batch, sample_batch_with, sample_tuple, AugmentationConfig,
    PLACEMENT_RETRIES,
};
pub use sample::{preprocess_shg, DatasetSplit, MultimodalSample, PatchTuple};
pub use synthetic::{synthetic_pair, synthetic_scene};
