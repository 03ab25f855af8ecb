//! Backward warping with bilinear sampling.

use rayon::prelude::*;

use crate::error::{FusionError, Result};
use crate::flow::FlowField;
use crate::image::{Mask, PlanarImage};

/// Bilinear sample of one plane at a fractional position, edge-clamped.
#[inline]
pub fn sample_bilinear(plane: &[f32], w: usize, h: usize, x: f32, y: f32) -> f32 {
    let xc = (x as f64).clamp(0.0, (w - 1) as f64);
    let yc = (y as f64).clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = xc - x0 as f64;
    let ty = yc - y0 as f64;
    let top = plane[y0 * w + x0] as f64 * (1.0 - tx) + plane[y0 * w + x1] as f64 * tx;
    let bot = plane[y1 * w + x0] as f64 * (1.0 - tx) + plane[y1 * w + x1] as f64 * tx;
    (top * (1.0 - ty) + bot * ty) as f32
}

/// Warps `img` backward by `flow`: `warped(x) = img(x + flow(x))`.
///
/// Sample positions outside the image are edge-clamped and marked 0 in the
/// returned validity mask; in-bounds samples are marked 1.
pub fn bilinear_warp(img: &PlanarImage, flow: &FlowField) -> Result<(PlanarImage, Mask)> {
    let (w, h) = img.dims();
    if flow.dims() != (w, h) {
        return Err(FusionError::dims((w, h), flow.dims(), "bilinear_warp"));
    }
    let mut warped = PlanarImage::new(w, h, img.channels());
    let mut valid = Mask::new(w, h);

    let u = flow.u();
    let v = flow.v();
    valid
        .data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let i = y * w + x;
                let sx = x as f32 + u[i];
                let sy = y as f32 + v[i];
                let inside =
                    sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f32 && sy <= (h - 1) as f32;
                *out = if inside { 1.0 } else { 0.0 };
            }
        });
    for c in 0..img.channels() {
        let src = img.plane(c);
        let mut dst = vec![0.0f32; w * h];
        dst.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let i = y * w + x;
                *out = sample_bilinear(src, w, h, x as f32 + u[i], y as f32 + v[i]);
            }
        });
        warped.plane_mut(c).copy_from_slice(&dst);
    }
    Ok((warped, valid))
}
