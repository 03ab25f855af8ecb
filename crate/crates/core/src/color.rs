//! Luma/chroma conversion and photometric matching.
//!
//! Detail fusion operates on luminance only; chroma is carried through from
//! the source. BT.601 weights are used throughout, with difference chroma
//! offset by 0.5 so every plane stays in `[0, 1]` for in-gamut inputs.

use rayon::prelude::*;

use crate::error::{FusionError, Result};
use crate::image::PlanarImage;

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// Splits an RGB image into a luma plane and a 2-channel chroma image.
///
/// Luma is the BT.601 weighted sum; chroma channels are `(B - Y) / 2 + 0.5`
/// and `(R - Y) / 2 + 0.5`.
pub fn rgb_to_yuv(img: &PlanarImage) -> Result<(PlanarImage, PlanarImage)> {
    if img.channels() != 3 {
        return Err(FusionError::InvalidInput(format!(
            "rgb_to_yuv needs a 3-channel image, got {} channels",
            img.channels()
        )));
    }
    let (w, h) = img.dims();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut luma = PlanarImage::new(w, h, 1);
    let mut chroma = PlanarImage::new(w, h, 2);

    luma.plane_mut(0)
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, y)| {
            *y = (KR * r[i] as f64 + KG * g[i] as f64 + KB * b[i] as f64) as f32;
        });
    let yp: Vec<f32> = luma.plane(0).to_vec();
    chroma
        .plane_mut(0)
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, u)| {
            *u = ((b[i] as f64 - yp[i] as f64) * 0.5 + 0.5) as f32;
        });
    chroma
        .plane_mut(1)
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, v)| {
            *v = ((r[i] as f64 - yp[i] as f64) * 0.5 + 0.5) as f32;
        });
    Ok((luma, chroma))
}

/// Inverse of [`rgb_to_yuv`], clamped to `[0, 1]`.
pub fn yuv_to_rgb(luma: &PlanarImage, chroma: &PlanarImage) -> Result<PlanarImage> {
    if luma.channels() != 1 || chroma.channels() != 2 {
        return Err(FusionError::InvalidInput(
            "yuv_to_rgb needs 1-channel luma and 2-channel chroma".into(),
        ));
    }
    if luma.dims() != chroma.dims() {
        return Err(FusionError::dims(luma.dims(), chroma.dims(), "yuv_to_rgb"));
    }
    let (w, h) = luma.dims();
    let y = luma.plane(0);
    let u = chroma.plane(0);
    let v = chroma.plane(1);
    let mut out = PlanarImage::new(w, h, 3);

    let mut r_plane = vec![0.0f32; w * h];
    let mut g_plane = vec![0.0f32; w * h];
    let mut b_plane = vec![0.0f32; w * h];
    r_plane
        .par_iter_mut()
        .zip(g_plane.par_iter_mut())
        .zip(b_plane.par_iter_mut())
        .enumerate()
        .for_each(|(i, ((rp, gp), bp))| {
            let yy = y[i] as f64;
            let bb = yy + (u[i] as f64 - 0.5) * 2.0;
            let rr = yy + (v[i] as f64 - 0.5) * 2.0;
            let gg = (yy - KR * rr - KB * bb) / KG;
            *rp = rr.clamp(0.0, 1.0) as f32;
            *gp = gg.clamp(0.0, 1.0) as f32;
            *bp = bb.clamp(0.0, 1.0) as f32;
        });
    out.plane_mut(0).copy_from_slice(&r_plane);
    out.plane_mut(1).copy_from_slice(&g_plane);
    out.plane_mut(2).copy_from_slice(&b_plane);
    Ok(out)
}

/// Per-channel mean in f64, accumulated per row for thread-count-independent
/// results.
fn channel_mean(plane: &[f32], w: usize) -> f64 {
    let row_sums: Vec<f64> = plane
        .par_chunks(w)
        .map(|row| row.iter().map(|v| *v as f64).sum::<f64>())
        .collect();
    row_sums.iter().sum::<f64>() / plane.len() as f64
}

fn channel_var(plane: &[f32], w: usize, mean: f64) -> f64 {
    let row_sums: Vec<f64> = plane
        .par_chunks(w)
        .map(|row| row.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>())
        .collect();
    row_sums.iter().sum::<f64>() / plane.len() as f64
}

/// Matches the reference image's per-channel mean and variance to the
/// source: `out = (ref - mean_ref) * std_src / max(std_ref, eps) + mean_src`,
/// clamped to `[0, 1]`.
///
/// A zero-variance reference channel collapses to the source mean.
pub fn match_color(reference: &PlanarImage, source: &PlanarImage) -> Result<PlanarImage> {
    if reference.channels() != 3 || source.channels() != 3 {
        return Err(FusionError::InvalidInput(
            "match_color needs two 3-channel images".into(),
        ));
    }
    const EPS: f64 = 1e-6;
    let (w, h) = reference.dims();
    let mut out = PlanarImage::new(w, h, 3);
    let src_w = source.width();
    for c in 0..3 {
        let rp = reference.plane(c);
        let sp = source.plane(c);
        let mean_ref = channel_mean(rp, w);
        let mean_src = channel_mean(sp, src_w);
        let std_ref = channel_var(rp, w, mean_ref).sqrt();
        let std_src = channel_var(sp, src_w, mean_src).sqrt();
        let gain = std_src / std_ref.max(EPS);
        out.plane_mut(c)
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, o)| {
                let v = (rp[i] as f64 - mean_ref) * gain + mean_src;
                *o = v.clamp(0.0, 1.0) as f32;
            });
    }
    Ok(out)
}
