//! Geometry and raster primitives shared across the toolkit.
//!
//! Conventions used everywhere: `x` grows rightwards, `y` downwards; rigid
//! transforms rotate counter-clockwise in these coordinates (`(1,0) ↦ (0,1)`
//! for a quarter turn) about a declared pivot, by default the pixel center
//! `((w−1)/2, (h−1)/2)`.

mod filter;
mod geometry;
mod image;
pub mod io;
mod warp;

pub use filter::{decimate, gaussian_blur, gaussian_kernel, gradient_magnitude, gradients};
pub use geometry::{apply_rigid, compose, invert, wrap_angle, C4Element, Point2D, RigidTransform2D};
pub use image::{Image, ValueRange};
pub use warp::{
    flip_horizontal, flip_vertical, in_support, rotate_about_center, rotate_c4, rotate_c4_preserving,
    rotate_plane_c4, sample_plane, warp, Interpolation, Warped,
};
