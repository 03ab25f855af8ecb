//! End-to-end fusion pipeline: crop, align, mask, fuse, blend, uncrop, with
//! per-stage wall-clock timings.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::blend::{alpha_blend_uncrop, blend_mask, smooth_boundary, BlendStack};
use crate::coarse::{crop_and_resample_source, estimate_translation};
use crate::color::{match_color, rgb_to_yuv};
use crate::config::PipelineConfig;
use crate::error::{FusionError, Result};
use crate::flow::{estimate_flow_pair, FlowField};
use crate::fusion::{fuse_luma, recombine, FusionInput};
use crate::geometry::{CameraMeta, Translation2D};
use crate::image::{Mask, PlanarImage};
use crate::masks::{defocus_map, flow_uncertainty_map, occlusion_map, rejection_map, FocusEstimate};
use crate::resample::{resample, resample_halving, Kernel};
use crate::warp::bilinear_warp;

/// Wall-clock duration of each pipeline stage, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub color_matching_ms: f64,
    pub coarse_alignment_ms: f64,
    pub optical_flow_ms: f64,
    pub warping_ms: f64,
    pub occlusion_map_ms: f64,
    pub defocus_map_ms: f64,
    pub rejection_map_ms: f64,
    pub fusion_ms: f64,
    pub blending_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    /// Sum of the individual stage entries (excludes `total_ms`).
    pub fn stage_sum_ms(&self) -> f64 {
        self.color_matching_ms
            + self.coarse_alignment_ms
            + self.optical_flow_ms
            + self.warping_ms
            + self.occlusion_map_ms
            + self.defocus_map_ms
            + self.rejection_map_ms
            + self.fusion_ms
            + self.blending_ms
    }

    /// Per-stage median over repeated runs.
    pub fn median(runs: &[StageTimings]) -> StageTimings {
        fn med(mut values: Vec<f64>) -> f64 {
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = values.len();
            if n == 0 {
                return 0.0;
            }
            if n % 2 == 1 {
                values[n / 2]
            } else {
                0.5 * (values[n / 2 - 1] + values[n / 2])
            }
        }
        StageTimings {
            color_matching_ms: med(runs.iter().map(|t| t.color_matching_ms).collect()),
            coarse_alignment_ms: med(runs.iter().map(|t| t.coarse_alignment_ms).collect()),
            optical_flow_ms: med(runs.iter().map(|t| t.optical_flow_ms).collect()),
            warping_ms: med(runs.iter().map(|t| t.warping_ms).collect()),
            occlusion_map_ms: med(runs.iter().map(|t| t.occlusion_map_ms).collect()),
            defocus_map_ms: med(runs.iter().map(|t| t.defocus_map_ms).collect()),
            rejection_map_ms: med(runs.iter().map(|t| t.rejection_map_ms).collect()),
            fusion_ms: med(runs.iter().map(|t| t.fusion_ms).collect()),
            blending_ms: med(runs.iter().map(|t| t.blending_ms).collect()),
            total_ms: med(runs.iter().map(|t| t.total_ms).collect()),
        }
    }
}

/// Intermediate products kept for dumping and inspection.
#[derive(Debug, Clone)]
pub struct Intermediates {
    pub src: PlanarImage,
    pub reference: PlanarImage,
    pub ref_warped: PlanarImage,
    pub flow_fwd: FlowField,
    pub flow_bwd: FlowField,
    pub occlusion: Mask,
    pub defocus: Mask,
    pub flow_uncertainty: Mask,
    pub rejection: Mask,
    pub blend: Mask,
    /// The alpha-blend composite at the fusion resolution, before it is
    /// resampled back into the wide frame.
    pub blended: PlanarImage,
}

/// Pipeline result: the full-resolution output frame plus diagnostics.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub image: PlanarImage,
    pub timings: StageTimings,
    /// Fusion was skipped (low-confidence coarse alignment); `image` is the
    /// wide frame passed through unchanged.
    pub skipped: bool,
    pub translation: Translation2D,
    pub focus_estimate: Option<FocusEstimate>,
    pub intermediates: Option<Intermediates>,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs the full fusion pipeline on a wide/tele pair.
///
/// Stages execute sequentially; intra-stage work parallelizes over the
/// current rayon pool with thread-count-invariant results.
pub fn run_pipeline(
    wide: &PlanarImage,
    tele: &PlanarImage,
    meta: &CameraMeta,
    config: &PipelineConfig,
    keep_intermediates: bool,
) -> Result<PipelineOutput> {
    config.validate()?;
    if wide.channels() != 3 || tele.channels() != 3 {
        return Err(FusionError::InvalidInput(
            "pipeline expects 3-channel wide and tele images".into(),
        ));
    }
    meta.validate(wide.dims(), tele.dims())?;
    let operator = config.operator()?;
    let (tw, th) = tele.dims();
    let rect = meta.tele_fov_rect;

    let total_start = Instant::now();
    let mut timings = StageTimings::default();

    // Coarse alignment: crop at the calibrated rect, estimate the residual
    // translation against the tele frame, re-crop at the adjusted rect.
    let stage = Instant::now();
    let src0 = crop_and_resample_source(wide, meta, tw, th)?;
    let estimate = estimate_translation(&src0, tele, &config.coarse)?;
    if estimate.low_confidence {
        timings.coarse_alignment_ms = ms_since(stage);
        timings.total_ms = ms_since(total_start);
        return Ok(PipelineOutput {
            image: wide.clone(),
            timings,
            skipped: true,
            translation: estimate.translation,
            focus_estimate: None,
            intermediates: None,
        });
    }
    let t = estimate.translation;
    let sx = rect.width / tw as f64;
    let sy = rect.height / th as f64;
    let rect_adj = rect.translated(-t.dx * sx, -t.dy * sy);
    let src = if t.dx == 0.0 && t.dy == 0.0 {
        src0
    } else {
        // The adjusted rect may poke past the frame by a few pixels;
        // edge-clamped sampling covers that sliver.
        crate::resample::resample_region(
            wide,
            (rect_adj.x, rect_adj.y),
            (rect_adj.width, rect_adj.height),
            tw,
            th,
            Kernel::Bicubic,
        )?
    };
    timings.coarse_alignment_ms = ms_since(stage);

    // Color matching: tele adjusted to the source's channel statistics.
    let stage = Instant::now();
    let reference = match_color(tele, &src)?;
    timings.color_matching_ms = ms_since(stage);

    // Dense flow at reduced resolution, both directions. The halving chain
    // anti-aliases the big downsample.
    let stage = Instant::now();
    let (y_src, chroma_src) = rgb_to_yuv(&src)?;
    let (y_ref, _) = rgb_to_yuv(&reference)?;
    let (gw, gh) = config.flow.grid_for(tw, th);
    let y_src_flow = resample_halving(&y_src, gw, gh)?;
    let y_ref_flow = resample_halving(&y_ref, gw, gh)?;
    let (fwd, bwd) = estimate_flow_pair(&y_src_flow, &y_ref_flow, &config.flow)?;
    timings.optical_flow_ms = ms_since(stage);

    // Upsample the forward flow to full resolution and warp the reference
    // luma onto the source grid.
    let stage = Instant::now();
    let flow_full = fwd.resampled(tw, th)?;
    let (y_ref_warped, _valid) = bilinear_warp(&y_ref, &flow_full)?;
    timings.warping_ms = ms_since(stage);

    // Robustness maps.
    let stage = Instant::now();
    let m_occ = occlusion_map(&fwd, &bwd, &config.occlusion)?;
    timings.occlusion_map_ms = ms_since(stage);

    let stage = Instant::now();
    let roi_flow = meta
        .focus_roi
        .scaled(gw as f64 / tw as f64, gh as f64 / th as f64);
    let (m_def, focus_estimate) = defocus_map(&fwd, roi_flow, &config.defocus)?;
    timings.defocus_map_ms = ms_since(stage);

    let stage = Instant::now();
    let m_rej = rejection_map(&y_src, &y_ref_warped, meta.focal_ratio, &config.rejection)?;
    timings.rejection_map_ms = ms_since(stage);

    // Luminance fusion, chroma carried from the source.
    let stage = Instant::now();
    let m_occ_full = Mask::from_image(&resample(&m_occ.as_image(), tw, th, Kernel::Bilinear)?);
    let y_fusion = fuse_luma(
        &FusionInput {
            y_src: &y_src,
            y_ref_warped: &y_ref_warped,
            occlusion: &m_occ_full,
            focal_ratio: meta.focal_ratio,
        },
        operator,
    )?;
    let i_fusion = recombine(&y_fusion, &chroma_src)?;
    timings.fusion_ms = ms_since(stage);

    // Adaptive blending and uncrop.
    let stage = Instant::now();
    let m_flow = flow_uncertainty_map(&fwd, &config.uncertainty)?;
    let boundary_sigma = config
        .boundary_sigma
        .unwrap_or(0.01 * rect.width.min(rect.height));
    let stack = BlendStack {
        occlusion: m_occ.clone(),
        defocus: m_def.clone(),
        flow_uncertainty: m_flow.clone(),
        rejection: m_rej.clone(),
        boundary_sigma,
    };
    let m_blend_raw = blend_mask(&stack, tw, th)?;
    let m_blend = smooth_boundary(&m_blend_raw, rect_adj, boundary_sigma);

    let meta_adj = CameraMeta {
        tele_fov_rect: rect_adj,
        ..meta.clone()
    };
    let mut image = alpha_blend_uncrop(&i_fusion, &src, &m_blend, wide, &meta_adj)?;
    if rect_adj != rect {
        restore_outside_rect(&mut image, wide, meta);
    }
    timings.blending_ms = ms_since(stage);
    timings.total_ms = ms_since(total_start);

    let intermediates = if keep_intermediates {
        let (i_ref_warped, _) = bilinear_warp(&reference, &flow_full)?;
        let blended = crate::blend::composite(&i_fusion, &src, &m_blend)?;
        Some(Intermediates {
            src,
            reference,
            ref_warped: i_ref_warped,
            flow_fwd: fwd,
            flow_bwd: bwd,
            occlusion: m_occ,
            defocus: m_def,
            flow_uncertainty: m_flow,
            rejection: m_rej,
            blend: m_blend,
            blended,
        })
    } else {
        None
    };

    Ok(PipelineOutput {
        image,
        timings,
        skipped: false,
        translation: t,
        focus_estimate: Some(focus_estimate),
        intermediates,
    })
}

/// Restores wide-frame values at every pixel whose center lies outside the
/// calibrated tele-FOV rect. The adjusted rect may have written a sliver
/// past the calibrated one; outside pixels must stay bit-identical to the
/// input.
fn restore_outside_rect(image: &mut PlanarImage, wide: &PlanarImage, meta: &CameraMeta) {
    let rect = meta.tele_fov_rect;
    let (w, h) = image.dims();
    for c in 0..image.channels() {
        let src = wide.plane(c);
        let dst = image.plane_mut(c);
        for y in 0..h {
            let cy = y as f64 + 0.5;
            let row_inside = cy > rect.y && cy < rect.y + rect.height;
            for x in 0..w {
                let cx = x as f64 + 0.5;
                if !(row_inside && cx > rect.x && cx < rect.x + rect.width) {
                    dst[y * w + x] = src[y * w + x];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{synthesize_pair, LayerSpec, RegionSpec, SceneSpec};

    fn base_spec() -> SceneSpec {
        SceneSpec {
            width: 192,
            height: 144,
            focal_ratio: 3.0,
            translation: [0.0, 0.0],
            noise_sigma: 0.0,
            color_gain: [1.0, 1.0, 1.0],
            seed: 7,
            margin: 12,
            focus_roi: None,
            max_disparity: 32.0,
            layers: vec![LayerSpec {
                region: RegionSpec::Full,
                disparity: [0.0, 0.0],
                blur_sigma: 0.0,
            }],
        }
    }

    #[test]
    fn single_layer_scene_runs_end_to_end() {
        let scene = base_spec().realize().unwrap();
        let (wide, tele, meta, _) = synthesize_pair(&scene).unwrap();
        let out = run_pipeline(&wide, &tele, &meta, &PipelineConfig::default(), true).unwrap();
        assert!(!out.skipped);
        assert_eq!(out.image.dims(), wide.dims());
        assert!(out.image.all_in_range(0.0, 1.0));
        let inter = out.intermediates.unwrap();
        assert_eq!(inter.src.dims(), tele.dims());
        assert!(out.timings.total_ms >= out.timings.stage_sum_ms() * 0.99);
    }

    #[test]
    fn constant_pair_skips_fusion() {
        let wide = PlanarImage::constant(96, 96, 3, 0.5);
        let tele = PlanarImage::constant(96, 96, 3, 0.5);
        let meta = CameraMeta {
            focal_ratio: 2.0,
            tele_fov_rect: crate::geometry::Rect::new(24.0, 24.0, 48.0, 48.0),
            focus_roi: crate::geometry::Rect::new(8.0, 8.0, 16.0, 16.0),
        };
        let out = run_pipeline(&wide, &tele, &meta, &PipelineConfig::default(), false).unwrap();
        assert!(out.skipped);
        assert_eq!(out.image, wide);
    }

    #[test]
    fn translation_is_recovered_and_outside_pixels_preserved() {
        let mut spec = base_spec();
        spec.translation = [4.0, -2.0];
        let scene = spec.realize().unwrap();
        let (wide, tele, meta, _) = synthesize_pair(&scene).unwrap();
        let out = run_pipeline(&wide, &tele, &meta, &PipelineConfig::default(), false).unwrap();
        assert!(!out.skipped);
        assert!(
            (out.translation.dx - 4.0).abs() <= 1.0 && (out.translation.dy + 2.0).abs() <= 1.0,
            "estimated translation {:?}",
            out.translation
        );
        // Outside the calibrated rect the output is the wide frame, bit for
        // bit, even though the adjusted rect shifted.
        let rect = meta.tele_fov_rect;
        let (w, h) = wide.dims();
        for y in 0..h {
            for x in 0..w {
                let cx = x as f64 + 0.5;
                let cy = y as f64 + 0.5;
                let inside = cx > rect.x
                    && cx < rect.x + rect.width
                    && cy > rect.y
                    && cy < rect.y + rect.height;
                if !inside {
                    for c in 0..3 {
                        assert_eq!(out.image.get(x, y, c).to_bits(), wide.get(x, y, c).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn empty_focus_roi_degrades_gracefully() {
        let mut spec = base_spec();
        spec.focus_roi = Some([0.0, 0.0, 0.0, 0.0]);
        let scene = spec.realize().unwrap();
        let (wide, tele, meta, _) = synthesize_pair(&scene).unwrap();
        let out = run_pipeline(&wide, &tele, &meta, &PipelineConfig::default(), true).unwrap();
        assert!(!out.skipped);
        let est = out.focus_estimate.unwrap();
        assert!(est.degenerate);
        let inter = out.intermediates.unwrap();
        assert!(inter.defocus.data().iter().all(|v| *v == 0.0));
    }
}
