//! Separable resampling and filtering primitives.
//!
//! All operations use the pixel-center mapping
//! `src = (dst + 0.5) * (src_size / dst_size) - 0.5` and clamp source
//! coordinates at the image edge. Filtering accumulates in `f64` so that
//! constant images survive any resize or blur within 1e-6.

use rayon::prelude::*;

use crate::error::{FusionError, Result};
use crate::image::PlanarImage;

/// Interpolation kernel for [`resample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// 2-tap triangle filter.
    Bilinear,
    /// 4-tap Catmull-Rom filter (a = -0.5). Interpolating: grid-aligned
    /// samples pass through exactly.
    Bicubic,
}

impl Kernel {
    fn support(self) -> usize {
        match self {
            Kernel::Bilinear => 2,
            Kernel::Bicubic => 4,
        }
    }
}

/// Per-output-coordinate taps of a 1-D resampling pass.
struct TapTable {
    /// First source index of each output coordinate's tap window.
    starts: Vec<isize>,
    /// `support` weights per output coordinate.
    weights: Vec<f64>,
    support: usize,
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

fn build_taps(dst_size: usize, origin: f64, scale: f64, kernel: Kernel) -> TapTable {
    let support = kernel.support();
    let mut starts = Vec::with_capacity(dst_size);
    let mut weights = Vec::with_capacity(dst_size * support);
    for i in 0..dst_size {
        let pos = origin + (i as f64 + 0.5) * scale - 0.5;
        let base = pos.floor();
        let t = pos - base;
        match kernel {
            Kernel::Bilinear => {
                starts.push(base as isize);
                weights.push(1.0 - t);
                weights.push(t);
            }
            Kernel::Bicubic => {
                starts.push(base as isize - 1);
                weights.extend_from_slice(&catmull_rom(t));
            }
        }
    }
    TapTable {
        starts,
        weights,
        support,
    }
}

#[inline]
fn clamp_index(i: isize, size: usize) -> usize {
    i.clamp(0, size as isize - 1) as usize
}

/// One separable pass over a single plane: resamples rows horizontally
/// (`dst` is `dst_w x src_h`).
fn pass_horizontal(src: &[f32], src_w: usize, src_h: usize, taps: &TapTable, dst_w: usize) -> Vec<f32> {
    let mut dst = vec![0.0f32; dst_w * src_h];
    dst.par_chunks_mut(dst_w).enumerate().for_each(|(y, row)| {
        let src_row = &src[y * src_w..(y + 1) * src_w];
        for (x, out) in row.iter_mut().enumerate() {
            let start = taps.starts[x];
            let w = &taps.weights[x * taps.support..(x + 1) * taps.support];
            let mut acc = 0.0f64;
            for (k, wk) in w.iter().enumerate() {
                acc += *wk * src_row[clamp_index(start + k as isize, src_w)] as f64;
            }
            *out = acc as f32;
        }
    });
    dst
}

/// Vertical pass (`src` is `w x src_h`, `dst` is `w x dst_h`).
fn pass_vertical(src: &[f32], w: usize, src_h: usize, taps: &TapTable, dst_h: usize) -> Vec<f32> {
    let mut dst = vec![0.0f32; w * dst_h];
    dst.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let start = taps.starts[y];
        let wts = &taps.weights[y * taps.support..(y + 1) * taps.support];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for (k, wk) in wts.iter().enumerate() {
                let sy = clamp_index(start + k as isize, src_h);
                acc += *wk * src[sy * w + x] as f64;
            }
            *out = acc as f32;
        }
    });
    dst
}

/// Resamples a fractional source window to `dst_w x dst_h`.
///
/// The window has top-left `origin` (source pixel coordinates, may be
/// fractional or out of bounds) and extent `size`; out-of-bounds taps are
/// edge-clamped. `resample` is the whole-image special case.
pub fn resample_region(
    img: &PlanarImage,
    origin: (f64, f64),
    size: (f64, f64),
    dst_w: usize,
    dst_h: usize,
    kernel: Kernel,
) -> Result<PlanarImage> {
    if dst_w == 0 || dst_h == 0 {
        return Err(FusionError::InvalidInput(
            "resample target dimensions must be positive".into(),
        ));
    }
    if !(size.0 > 0.0 && size.1 > 0.0) {
        return Err(FusionError::InvalidInput(
            "resample source window must have positive extent".into(),
        ));
    }
    let (src_w, src_h) = img.dims();
    let hx = build_taps(dst_w, origin.0, size.0 / dst_w as f64, kernel);
    let vy = build_taps(dst_h, origin.1, size.1 / dst_h as f64, kernel);

    let mut out = PlanarImage::new(dst_w, dst_h, img.channels());
    for c in 0..img.channels() {
        let mid = pass_horizontal(img.plane(c), src_w, src_h, &hx, dst_w);
        let fin = pass_vertical(&mid, dst_w, src_h, &vy, dst_h);
        out.plane_mut(c).copy_from_slice(&fin);
    }
    Ok(out)
}

/// Resamples the whole image to `dst_w x dst_h` with the given kernel.
pub fn resample(img: &PlanarImage, dst_w: usize, dst_h: usize, kernel: Kernel) -> Result<PlanarImage> {
    let (w, h) = img.dims();
    resample_region(img, (0.0, 0.0), (w as f64, h as f64), dst_w, dst_h, kernel)
}

/// Normalized 1-D Gaussian taps truncated at `±ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    let denom = 2.0 * sigma * sigma;
    for i in -(radius as isize)..=(radius as isize) {
        k.push((-(i * i) as f64 / denom).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with edge-clamp boundaries.
///
/// `sigma == 0` is the identity. Errors on negative sigma.
pub fn gaussian_blur(img: &PlanarImage, sigma: f64) -> Result<PlanarImage> {
    if sigma < 0.0 {
        return Err(FusionError::InvalidInput(format!(
            "gaussian sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let (w, h) = img.dims();

    let mut out = PlanarImage::new(w, h, img.channels());
    for c in 0..img.channels() {
        let src = img.plane(c);
        // Horizontal.
        let mut mid = vec![0.0f32; w * h];
        mid.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let src_row = &src[y * w..(y + 1) * w];
            for (x, out) in row.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (j, wk) in k.iter().enumerate() {
                    let sx = clamp_index(x as isize + j as isize - radius, w);
                    acc += wk * src_row[sx] as f64;
                }
                *out = acc as f32;
            }
        });
        // Vertical.
        let dst = out.plane_mut(c);
        dst.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (j, wk) in k.iter().enumerate() {
                    let sy = clamp_index(y as isize + j as isize - radius, h);
                    acc += wk * mid[sy * w + x] as f64;
                }
                *out = acc as f32;
            }
        });
    }
    Ok(out)
}

/// Coarse-to-fine image pyramid. Level 0 is the input; each further level is
/// a Gaussian pre-blur (`sigma = 0.5 / scale_factor`) followed by a bilinear
/// resample of the previous level.
///
/// Levels stop early once the next level would drop below 8x8, so the result
/// may hold fewer than `levels` images.
pub fn build_pyramid(img: &PlanarImage, levels: usize, scale_factor: f64) -> Result<Vec<PlanarImage>> {
    if levels < 1 {
        return Err(FusionError::InvalidInput("pyramid needs at least one level".into()));
    }
    if !(scale_factor > 0.0 && scale_factor < 1.0) {
        return Err(FusionError::InvalidInput(format!(
            "pyramid scale factor must be in (0, 1), got {scale_factor}"
        )));
    }
    let sigma = 0.5 / scale_factor;
    let mut out = vec![img.clone()];
    while out.len() < levels {
        let prev = out.last().unwrap();
        let (w, h) = prev.dims();
        let nw = ((w as f64 * scale_factor).round() as usize).max(1);
        let nh = ((h as f64 * scale_factor).round() as usize).max(1);
        if nw < 8 || nh < 8 {
            break;
        }
        let blurred = gaussian_blur(prev, sigma)?;
        out.push(resample(&blurred, nw, nh, Kernel::Bilinear)?);
    }
    Ok(out)
}

/// Large-ratio downsample: bilinear halving while the remaining ratio
/// exceeds 2 (each halving is an exact 2x2 box average, which is the
/// anti-aliasing), then one bilinear pass to the final size.
pub fn resample_halving(img: &PlanarImage, dst_w: usize, dst_h: usize) -> Result<PlanarImage> {
    let mut current = img.clone();
    loop {
        let (w, h) = current.dims();
        if w < dst_w * 2 || h < dst_h * 2 {
            break;
        }
        current = resample(&current, w / 2, h / 2, Kernel::Bilinear)?;
    }
    resample(&current, dst_w, dst_h, Kernel::Bilinear)
}

/// Bilinear downsample by `1 / ratio` followed by bilinear upsample back to
/// the original size. Removes the detail band above the reduced sampling
/// rate; shared by the rejection map and the fusion operator.
pub fn downup(img: &PlanarImage, ratio: f64) -> Result<PlanarImage> {
    if !(ratio >= 1.0) {
        return Err(FusionError::InvalidInput(format!(
            "downup ratio must be >= 1, got {ratio}"
        )));
    }
    let (w, h) = img.dims();
    let dw = ((w as f64 / ratio).round() as usize).max(1);
    let dh = ((h as f64 / ratio).round() as usize).max(1);
    let down = resample(img, dw, dh, Kernel::Bilinear)?;
    resample(&down, w, h, Kernel::Bilinear)
}
