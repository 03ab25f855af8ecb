//! Hybrid zoom fusion for synchronized wide/tele camera pairs.
//!
//! Phones cover intermediate zoom levels by cropping and upsampling the wide
//! camera, which loses detail the tele camera already captured. This crate
//! implements the full fusion pipeline that transfers that detail while
//! staying robust to the ways the two cameras disagree:
//!
//! - [`coarse`] crops the wide frame to the tele field of view, estimates a
//!   global translation from corner matches, and matches colors.
//! - [`flow`] computes dense displacement with per-pixel uncertainty.
//! - [`masks`] derives the four robustness maps: defocus, occlusion, flow
//!   uncertainty, and alignment rejection.
//! - [`fusion`] injects the tele detail band into the wide luminance.
//! - [`blend`] combines the maps into a blending mask, feathers the field-of-
//!   view boundary, and writes the result back into the full wide frame.
//! - [`rig`] synthesizes wide/tele pairs with ground-truth flow, occlusion,
//!   and defocus labels, so every stage is testable against an oracle.
//! - [`pipeline`] wires the stages together and reports per-stage timings.
//!
//! All image math runs on planar `f32` data in `[0, 1]`; results are
//! bit-identical across thread counts.

pub mod blend;
pub mod coarse;
pub mod color;
pub mod config;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod masks;
pub mod metrics;
pub mod pipeline;
pub mod resample;
pub mod rig;
pub mod warp;

pub use error::{FusionError, Result};
pub use geometry::{CameraMeta, Rect, Translation2D};
pub use image::{Mask, PlanarImage};
