//! Mask combination, boundary feathering, and the final alpha-blend uncrop.

use rayon::prelude::*;

use crate::error::{FusionError, Result};
use crate::geometry::{CameraMeta, Rect};
use crate::image::{Mask, PlanarImage};
use crate::resample::{resample, Kernel};

/// The four robustness maps at their native resolutions, plus the feather
/// width for the field-of-view boundary.
#[derive(Debug, Clone)]
pub struct BlendStack {
    pub occlusion: Mask,
    pub defocus: Mask,
    pub flow_uncertainty: Mask,
    pub rejection: Mask,
    /// Feather sigma in wide-frame pixels; 0 disables feathering.
    pub boundary_sigma: f64,
}

fn upsample_mask(mask: &Mask, w: usize, h: usize) -> Result<Mask> {
    if mask.dims() == (w, h) {
        return Ok(mask.clone());
    }
    let img = resample(&mask.as_image(), w, h, Kernel::Bilinear)?;
    Ok(Mask::from_image(&img))
}

/// Combines the stack into the blending mask at the fusion resolution:
/// each map is bilinearly upsampled, then
/// `M_blend = max(1 - occ - defocus - flow - reject, 0)` pointwise.
pub fn blend_mask(stack: &BlendStack, out_w: usize, out_h: usize) -> Result<Mask> {
    let occ = upsample_mask(&stack.occlusion, out_w, out_h)?;
    let def = upsample_mask(&stack.defocus, out_w, out_h)?;
    let unc = upsample_mask(&stack.flow_uncertainty, out_w, out_h)?;
    let rej = upsample_mask(&stack.rejection, out_w, out_h)?;

    let mut out = Mask::new(out_w, out_h);
    out.data_mut()
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, m)| {
            let v = 1.0
                - occ.data()[i] as f64
                - def.data()[i] as f64
                - unc.data()[i] as f64
                - rej.data()[i] as f64;
            *m = v.max(0.0) as f32;
        });
    Ok(out)
}

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Multiplies the mask by a feather ramp along the tele field-of-view
/// boundary: 0 at the rect edge, rising with a Gaussian-integral profile to
/// 1 beyond roughly 3 sigma inside.
///
/// Distances are measured in wide-frame pixels through the rect mapping, so
/// `sigma` is in wide pixels regardless of the mask resolution.
pub fn smooth_boundary(mask: &Mask, tele_fov_rect: Rect, sigma: f64) -> Mask {
    if sigma <= 0.0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let sx = tele_fov_rect.width / w as f64;
    let sy = tele_fov_rect.height / h as f64;
    let denom = sigma * std::f64::consts::SQRT_2;

    let mut out = mask.clone();
    out.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            let dy = (y as f64 * sy).min((h - 1 - y) as f64 * sy);
            for (x, m) in row.iter_mut().enumerate() {
                let dx = (x as f64 * sx).min((w - 1 - x) as f64 * sx);
                let d = dx.min(dy);
                let feather = erf(d / denom).clamp(0.0, 1.0);
                *m = (*m as f64 * feather) as f32;
            }
        });
    out
}

/// Per-pixel convex combination `m * fusion + (1 - m) * src` at the fusion
/// resolution: the hybrid-zoom composite before it is written back into
/// the wide frame.
pub fn composite(fusion: &PlanarImage, src: &PlanarImage, m_blend: &Mask) -> Result<PlanarImage> {
    let (cw, ch) = fusion.dims();
    if src.dims() != (cw, ch) || fusion.channels() != src.channels() {
        return Err(FusionError::dims((cw, ch), src.dims(), "composite src"));
    }
    if m_blend.dims() != (cw, ch) {
        return Err(FusionError::dims((cw, ch), m_blend.dims(), "composite mask"));
    }
    let mut blended = PlanarImage::new(cw, ch, fusion.channels());
    for c in 0..fusion.channels() {
        let fp = fusion.plane(c);
        let sp = src.plane(c);
        let md = m_blend.data();
        let out = blended.plane_mut(c);
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let m = md[i] as f64;
            *o = (m * fp[i] as f64 + (1.0 - m) * sp[i] as f64) as f32;
        });
    }
    Ok(blended)
}

/// Alpha-blends fusion and source, then writes the result back into the full
/// wide frame over `tele_fov_rect` (bicubic, inverting the coarse-alignment
/// crop). Pixels whose centers fall outside the rect keep the wide frame's
/// values bit for bit.
pub fn alpha_blend_uncrop(
    fusion: &PlanarImage,
    src: &PlanarImage,
    m_blend: &Mask,
    full_w: &PlanarImage,
    meta: &CameraMeta,
) -> Result<PlanarImage> {
    let (cw, ch) = fusion.dims();
    if fusion.channels() != full_w.channels() {
        return Err(FusionError::InvalidInput(
            "alpha_blend_uncrop channel counts disagree".into(),
        ));
    }
    let rect = meta.tele_fov_rect;
    if rect.is_empty() {
        return Err(FusionError::InvalidInput("tele_fov_rect is empty".into()));
    }
    let blended = composite(fusion, src, m_blend)?;

    // Uncrop: bicubic sampling of the blended crop at each covered wide
    // pixel. Pixel (X, Y) is covered when its center lies inside the rect.
    let mut out = full_w.clone();
    let (fw, fh) = full_w.dims();
    let x_lo = (rect.x - 0.5).ceil().max(0.0) as usize;
    let y_lo = (rect.y - 0.5).ceil().max(0.0) as usize;
    let x_hi = ((rect.x + rect.width - 0.5).floor() as isize).min(fw as isize - 1);
    let y_hi = ((rect.y + rect.height - 0.5).floor() as isize).min(fh as isize - 1);
    if x_hi < x_lo as isize || y_hi < y_lo as isize {
        return Ok(out);
    }
    let (x_hi, y_hi) = (x_hi as usize, y_hi as usize);
    let sx = rect.width / cw as f64;
    let sy = rect.height / ch as f64;

    for c in 0..out.channels() {
        let bp = blended.plane(c);
        let plane = out.plane_mut(c);
        plane
            .par_chunks_mut(fw)
            .enumerate()
            .skip(y_lo)
            .take(y_hi - y_lo + 1)
            .for_each(|(yy, row)| {
                let v = (yy as f64 + 0.5 - rect.y) / sy - 0.5;
                for (xx, o) in row.iter_mut().enumerate().skip(x_lo).take(x_hi - x_lo + 1) {
                    let u = (xx as f64 + 0.5 - rect.x) / sx - 0.5;
                    *o = sample_bicubic(bp, cw, ch, u, v).clamp(0.0, 1.0) as f32;
                }
            });
    }
    Ok(out)
}

fn cubic_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

/// Edge-clamped Catmull-Rom sample of one plane.
fn sample_bicubic(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let bx = x.floor();
    let by = y.floor();
    let wx = cubic_weights(x - bx);
    let wy = cubic_weights(y - by);
    let mut acc = 0.0f64;
    for (j, wyj) in wy.iter().enumerate() {
        let sy = (by as isize + j as isize - 1).clamp(0, h as isize - 1) as usize;
        let mut row_acc = 0.0f64;
        for (i, wxi) in wx.iter().enumerate() {
            let sxp = (bx as isize + i as isize - 1).clamp(0, w as isize - 1) as usize;
            row_acc += wxi * plane[sy * w + sxp] as f64;
        }
        acc += wyj * row_acc;
    }
    acc
}
