//! Luminance detail fusion.
//!
//! The default operator injects the detail band the tele reference carries
//! beyond the wide camera's sampling rate: `D = ref - downup(ref)`, attenuated
//! by the occlusion mask and added to the source luma. The operator sits
//! behind a config key so a learned model can replace it without touching the
//! rest of the pipeline.

use std::str::FromStr;

use rayon::prelude::*;

use crate::color::yuv_to_rgb;
use crate::error::{FusionError, Result};
use crate::image::{Mask, PlanarImage};
use crate::resample::downup;

/// Available fusion operators, selected by config key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionOperator {
    /// Detail-band injection (`"band_inject"`).
    #[default]
    BandInject,
}

impl FromStr for FusionOperator {
    type Err = FusionError;

    fn from_str(key: &str) -> Result<Self> {
        match key {
            "band_inject" => Ok(FusionOperator::BandInject),
            other => Err(FusionError::InvalidConfig(format!(
                "unknown fusion operator {other:?} (available: \"band_inject\")"
            ))),
        }
    }
}

/// Inputs to the luminance fusion stage. All planes share one resolution.
#[derive(Debug)]
pub struct FusionInput<'a> {
    pub y_src: &'a PlanarImage,
    pub y_ref_warped: &'a PlanarImage,
    pub occlusion: &'a Mask,
    pub focal_ratio: f64,
}

impl FusionInput<'_> {
    fn validate(&self) -> Result<()> {
        if self.y_src.channels() != 1 || self.y_ref_warped.channels() != 1 {
            return Err(FusionError::InvalidInput(
                "fusion operates on single-channel luma planes".into(),
            ));
        }
        let dims = self.y_src.dims();
        if self.y_ref_warped.dims() != dims {
            return Err(FusionError::dims(dims, self.y_ref_warped.dims(), "fuse_luma reference"));
        }
        if self.occlusion.dims() != dims {
            return Err(FusionError::dims(dims, self.occlusion.dims(), "fuse_luma occlusion"));
        }
        if !(self.focal_ratio > 1.0) {
            return Err(FusionError::InvalidInput(format!(
                "focal_ratio must be > 1, got {}",
                self.focal_ratio
            )));
        }
        Ok(())
    }
}

/// Fuses the tele detail band into the source luma:
/// `Y = clamp(y_src + (1 - occlusion) * (y_ref - downup(y_ref)), 0, 1)`.
///
/// Occluded pixels receive no detail, so raising the occlusion mask moves
/// the output pointwise toward `y_src`.
pub fn fuse_luma(input: &FusionInput<'_>, operator: FusionOperator) -> Result<PlanarImage> {
    input.validate()?;
    match operator {
        FusionOperator::BandInject => band_inject(input),
    }
}

fn band_inject(input: &FusionInput<'_>) -> Result<PlanarImage> {
    let (w, h) = input.y_src.dims();
    let low = downup(input.y_ref_warped, input.focal_ratio)?;
    let sp = input.y_src.plane(0);
    let rp = input.y_ref_warped.plane(0);
    let lp = low.plane(0);
    let occ = input.occlusion.data();

    let mut out = PlanarImage::new(w, h, 1);
    out.plane_mut(0)
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| {
            let detail = rp[i] as f64 - lp[i] as f64;
            let v = sp[i] as f64 + (1.0 - occ[i] as f64) * detail;
            *o = v.clamp(0.0, 1.0) as f32;
        });
    Ok(out)
}

/// Reattaches the source chroma to the fused luma and converts back to RGB.
pub fn recombine(y_fusion: &PlanarImage, chroma_src: &PlanarImage) -> Result<PlanarImage> {
    yuv_to_rgb(y_fusion, chroma_src)
}
