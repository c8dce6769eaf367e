//! Rigid registration of monomodal image pairs, typically two CoMIRs.
//!
//! Every backend estimates a [`RigidTransform2D`] mapping reference
//! coordinates to floating-image coordinates, so that
//! `warp(floating, t)` lands on the reference grid. Three backends are
//! provided:
//! - [`register_mi`]: Mattes mutual information maximized by a (1+1)
//!   evolutionary strategy.
//! - [`register_intensity`]: a coarse-to-fine gradient method on a distance
//!   that combines intensity level sets with spatial proximity.
//! - [`register_features`]: scale-space keypoints, ratio-test matching and a
//!   two-point rigid consensus fit.
//!
//! [`register_multistart`] runs any of them from several initial transforms.

mod edt;
mod error;
mod features;
mod intensity;
mod mi;
mod multistart;
mod preprocess;
mod result;

pub use comir::imaging::RigidTransform2D;
pub use error::{RegistrationError, Result};
pub use features::{
    detect_keypoints, estimate_rigid_consensus, match_descriptors, procrustes_rigid,
    register_features, rigid_from_two_points, Correspondence, FeatureConfig, Keypoint,
};
pub use intensity::{level_distance, register_intensity, IntensityConfig, PyramidLevel, Squash};
pub use mi::{mattes_mi, register_mi, MIConfig, ParzenWindow};
pub use multistart::{register_multistart, rotation_starts, Backend};
pub use preprocess::{pca_reduce, quantize_levels, to_single_channel};
pub use result::{Method, RegistrationResult};
