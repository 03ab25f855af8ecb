//! Pyramidal Horn-Schunck solver with warping.
//!
//! Each level linearizes the brightness-constancy residual around the
//! current flow (re-warping the reference every few sweeps) and runs Jacobi
//! sweeps on the total flow. Jacobi updates read only the previous iterate,
//! so results are independent of the number of worker threads.

use rayon::prelude::*;

use crate::error::Result;
use crate::image::PlanarImage;
use crate::resample::build_pyramid;
use crate::warp::sample_bilinear;

use super::{FlowField, FlowParams};

/// Sweeps between re-linearizations of the data term.
const REWARP_INTERVAL: usize = 5;

pub(super) fn solve_pyramidal(
    src: &PlanarImage,
    reference: &PlanarImage,
    params: &FlowParams,
) -> Result<FlowField> {
    let pyr_src = build_pyramid(src, params.pyramid_levels, params.scale_factor)?;
    let pyr_ref = build_pyramid(reference, params.pyramid_levels, params.scale_factor)?;
    let levels = pyr_src.len();

    let mut flow: Option<FlowField> = None;
    for level in (0..levels).rev() {
        let (w, h) = pyr_src[level].dims();
        let mut current = match flow.take() {
            None => FlowField::new(w, h),
            Some(prev) => prev.resampled(w, h)?,
        };
        solve_level(&pyr_src[level], &pyr_ref[level], &mut current, params);
        current.clamp_magnitude(params.max_displacement as f32);
        flow = Some(current);
    }
    Ok(flow.unwrap())
}

/// Warps one plane backward by (u, v).
fn warp_plane(plane: &[f32], w: usize, h: usize, u: &[f32], v: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            *o = sample_bilinear(plane, w, h, x as f32 + u[i], y as f32 + v[i]);
        }
    });
    out
}

/// Linearized data term at the current flow: gradients averaged between the
/// source and the warped reference, plus the constant residual term
/// `c = (warped - src) - gx * u0 - gy * v0`.
struct DataTerm {
    gx: Vec<f32>,
    gy: Vec<f32>,
    c: Vec<f32>,
    denom: Vec<f32>,
}

fn linearize(
    src: &[f32],
    reference: &[f32],
    w: usize,
    h: usize,
    u: &[f32],
    v: &[f32],
    alpha: f64,
) -> DataTerm {
    let warped = warp_plane(reference, w, h, u, v);
    let n = w * h;
    let mut gx = vec![0.0f32; n];
    let mut gy = vec![0.0f32; n];
    let mut c = vec![0.0f32; n];
    let mut denom = vec![0.0f32; n];
    let alpha2 = alpha * alpha;

    gx.par_chunks_mut(w)
        .zip(gy.par_chunks_mut(w))
        .zip(c.par_chunks_mut(w))
        .zip(denom.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (((gxr, gyr), cr), dr))| {
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            for x in 0..w {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let i = y * w + x;
                let dx = 0.25
                    * ((src[y * w + xp] - src[y * w + xm]) as f64
                        + (warped[y * w + xp] - warped[y * w + xm]) as f64);
                let dy = 0.25
                    * ((src[yp * w + x] - src[ym * w + x]) as f64
                        + (warped[yp * w + x] - warped[ym * w + x]) as f64);
                let it = warped[i] as f64 - src[i] as f64;
                gxr[x] = dx as f32;
                gyr[x] = dy as f32;
                cr[x] = (it - dx * u[i] as f64 - dy * v[i] as f64) as f32;
                dr[x] = (alpha2 + dx * dx + dy * dy) as f32;
            }
        });
    DataTerm { gx, gy, c, denom }
}

fn solve_level(src: &PlanarImage, reference: &PlanarImage, flow: &mut FlowField, params: &FlowParams) {
    let (w, h) = src.dims();
    let sp = src.plane(0);
    let rp = reference.plane(0);

    let mut u = flow.u().to_vec();
    let mut v = flow.v().to_vec();
    let mut u_next = vec![0.0f32; w * h];
    let mut v_next = vec![0.0f32; w * h];
    let mut term: Option<DataTerm> = None;

    for sweep in 0..params.iterations_per_level {
        if sweep % REWARP_INTERVAL == 0 {
            term = Some(linearize(sp, rp, w, h, &u, &v, params.smoothness_weight));
        }
        let t = term.as_ref().unwrap();
        u_next
            .par_chunks_mut(w)
            .zip(v_next.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (ur, vr))| {
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(h - 1);
                for x in 0..w {
                    let xm = x.saturating_sub(1);
                    let xp = (x + 1).min(w - 1);
                    let i = y * w + x;
                    let ubar = 0.25
                        * (u[y * w + xm] + u[y * w + xp] + u[ym * w + x] + u[yp * w + x]);
                    let vbar = 0.25
                        * (v[y * w + xm] + v[y * w + xp] + v[ym * w + x] + v[yp * w + x]);
                    let r = (t.gx[i] * ubar + t.gy[i] * vbar + t.c[i]) / t.denom[i];
                    ur[x] = ubar - t.gx[i] * r;
                    vr[x] = vbar - t.gy[i] * r;
                }
            });
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
    }

    flow.u_mut().copy_from_slice(&u);
    flow.v_mut().copy_from_slice(&v);
}
