//! Dense displacement estimation with per-pixel Laplacian uncertainty.
//!
//! The solver is a classical pyramidal Horn-Schunck scheme with warping:
//! a brightness-constancy data term linearized around the warped reference,
//! a quadratic smoothness term, and a fixed number of Jacobi sweeps per
//! pyramid level. It stands behind the same interface a learned flow model
//! would use: displacement plus log-variance channels, forward and backward.

mod flo;
mod solver;

pub use flo::{read_flo, read_logvar_sidecar, write_flo, write_logvar_sidecar};

use rayon::prelude::*;

use crate::error::{FusionError, Result};
use crate::image::PlanarImage;
use crate::warp::bilinear_warp;

/// Log-variance channels are clamped to `[ln 1e-4, ln 1e4]`.
pub const LOGVAR_MIN: f32 = -9.210340;
pub const LOGVAR_MAX: f32 = 9.210340;

/// Dense per-pixel displacement with per-axis log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    logvar_x: Vec<f32>,
    logvar_y: Vec<f32>,
}

impl FlowField {
    /// Zero flow, zero log-variance.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        let n = width * height;
        FlowField {
            width,
            height,
            u: vec![0.0; n],
            v: vec![0.0; n],
            logvar_x: vec![0.0; n],
            logvar_y: vec![0.0; n],
        }
    }

    /// Constant displacement everywhere.
    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let mut f = Self::new(width, height);
        f.u.fill(u);
        f.v.fill(v);
        f
    }

    pub fn from_planes(
        width: usize,
        height: usize,
        u: Vec<f32>,
        v: Vec<f32>,
        logvar_x: Vec<f32>,
        logvar_y: Vec<f32>,
    ) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || logvar_x.len() != n || logvar_y.len() != n {
            return Err(FusionError::InvalidInput(
                "flow plane lengths do not match dimensions".into(),
            ));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
            logvar_x,
            logvar_y,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut [f32] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [f32] {
        &mut self.v
    }

    pub fn logvar_x(&self) -> &[f32] {
        &self.logvar_x
    }

    pub fn logvar_y(&self) -> &[f32] {
        &self.logvar_y
    }

    pub fn logvar_x_mut(&mut self) -> &mut [f32] {
        &mut self.logvar_x
    }

    pub fn logvar_y_mut(&mut self) -> &mut [f32] {
        &mut self.logvar_y
    }

    #[inline]
    pub fn displacement(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Resamples displacement bilinearly to a new size, rescaling the vector
    /// components by the dimension ratios. Log-variance planes are resampled
    /// without rescaling.
    pub fn resampled(&self, new_w: usize, new_h: usize) -> Result<FlowField> {
        use crate::resample::{resample, Kernel};
        let sx = new_w as f64 / self.width as f64;
        let sy = new_h as f64 / self.height as f64;
        let mut planes = Vec::with_capacity(4);
        for (data, scale) in [
            (&self.u, sx as f32),
            (&self.v, sy as f32),
            (&self.logvar_x, 1.0),
            (&self.logvar_y, 1.0),
        ] {
            let img = PlanarImage::from_planes(self.width, self.height, 1, data.clone())?;
            let res = resample(&img, new_w, new_h, Kernel::Bilinear)?;
            planes.push(res.plane(0).iter().map(|p| p * scale).collect::<Vec<f32>>());
        }
        let ly = planes.pop().unwrap();
        let lx = planes.pop().unwrap();
        let v = planes.pop().unwrap();
        let u = planes.pop().unwrap();
        FlowField::from_planes(new_w, new_h, u, v, lx, ly)
    }

    /// Clamps displacement magnitude to `max_mag`, preserving direction.
    pub fn clamp_magnitude(&mut self, max_mag: f32) {
        self.u
            .par_iter_mut()
            .zip(self.v.par_iter_mut())
            .for_each(|(u, v)| {
                let mag = (*u * *u + *v * *v).sqrt();
                if mag > max_mag {
                    let s = max_mag / mag;
                    *u *= s;
                    *v *= s;
                }
            });
    }

    pub fn max_magnitude(&self) -> f32 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u * u + v * v).sqrt())
            .fold(0.0, f32::max)
    }
}

/// Solver configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    /// Width of the reduced flow grid (portrait orientation default).
    pub flow_width: usize,
    /// Height of the reduced flow grid; swapped with width for landscape
    /// inputs by the pipeline.
    pub flow_height: usize,
    pub pyramid_levels: usize,
    /// Downscale factor between pyramid levels, in (0, 1).
    pub scale_factor: f64,
    /// Jacobi sweeps per level; the reference is re-warped every few sweeps.
    pub iterations_per_level: usize,
    /// Horn-Schunck regularization weight (alpha).
    pub smoothness_weight: f64,
    /// Displacement magnitude clamp, in flow-grid pixels.
    pub max_displacement: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            flow_width: 384,
            flow_height: 512,
            pyramid_levels: 5,
            scale_factor: 0.5,
            iterations_per_level: 30,
            smoothness_weight: 0.1,
            max_displacement: 64.0,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(FusionError::InvalidConfig("pyramid_levels must be >= 1".into()));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor < 1.0) {
            return Err(FusionError::InvalidConfig(format!(
                "scale_factor must be in (0, 1), got {}",
                self.scale_factor
            )));
        }
        if self.iterations_per_level == 0 {
            return Err(FusionError::InvalidConfig("iterations_per_level must be >= 1".into()));
        }
        if !(self.smoothness_weight > 0.0) {
            return Err(FusionError::InvalidConfig("smoothness_weight must be > 0".into()));
        }
        if !(self.max_displacement > 0.0) {
            return Err(FusionError::InvalidConfig("max_displacement must be > 0".into()));
        }
        if self.flow_width == 0 || self.flow_height == 0 {
            return Err(FusionError::InvalidConfig("flow grid must be non-empty".into()));
        }
        Ok(())
    }

    /// Flow grid size for a given image size: the configured grid with its
    /// orientation matched to the image, clamped so it never exceeds the
    /// image itself.
    pub fn grid_for(&self, img_w: usize, img_h: usize) -> (usize, usize) {
        let (mut gw, mut gh) = (self.flow_width, self.flow_height);
        if (img_w >= img_h) != (gw >= gh) {
            std::mem::swap(&mut gw, &mut gh);
        }
        (gw.min(img_w), gh.min(img_h))
    }
}

/// Estimates dense flow from `src` to `reference` (single-channel inputs at
/// the flow resolution). The returned field includes log-variance channels
/// from [`estimate_uncertainty`].
pub fn estimate_flow(src: &PlanarImage, reference: &PlanarImage, params: &FlowParams) -> Result<FlowField> {
    if src.channels() != 1 || reference.channels() != 1 {
        return Err(FusionError::InvalidInput(
            "estimate_flow expects single-channel luma inputs".into(),
        ));
    }
    if src.dims() != reference.dims() {
        return Err(FusionError::dims(src.dims(), reference.dims(), "estimate_flow"));
    }
    params.validate()?;

    let mut flow = solver::solve_pyramidal(src, reference, params)?;
    let (lx, ly) = estimate_uncertainty(src, reference, &flow)?;
    flow.logvar_x_mut().copy_from_slice(&lx);
    flow.logvar_y_mut().copy_from_slice(&ly);
    Ok(flow)
}

/// Runs [`estimate_flow`] in both directions with identical parameters.
pub fn estimate_flow_pair(
    src: &PlanarImage,
    reference: &PlanarImage,
    params: &FlowParams,
) -> Result<(FlowField, FlowField)> {
    let fwd = estimate_flow(src, reference, params)?;
    let bwd = estimate_flow(reference, src, params)?;
    Ok((fwd, bwd))
}

/// Residual-based log-variance: per pixel, the photometric residual energy
/// over a 7x7 window is compared against the local gradient energy of the
/// warped reference along each axis.
///
/// `logvar_a = ln(mean(r^2) / (mean((d_a ref)^2) + eps) + eps)`, clamped to
/// `[LOGVAR_MIN, LOGVAR_MAX]`. High residual relative to gradient energy
/// (weak texture or photometric inconsistency) means high variance.
pub fn estimate_uncertainty(
    src: &PlanarImage,
    reference: &PlanarImage,
    flow: &FlowField,
) -> Result<(Vec<f32>, Vec<f32>)> {
    const WINDOW_RADIUS: isize = 3;
    const EPS: f64 = 1e-6;

    let (w, h) = src.dims();
    if reference.dims() != (w, h) || flow.dims() != (w, h) {
        return Err(FusionError::dims(src.dims(), reference.dims(), "estimate_uncertainty"));
    }
    let (warped, _) = bilinear_warp(reference, flow)?;
    let sp = src.plane(0);
    let wp = warped.plane(0);

    // Per-pixel squared residual and squared axis gradients of the warped
    // reference (central differences, edge-clamped).
    let n = w * h;
    let mut r2 = vec![0.0f32; n];
    let mut gx2 = vec![0.0f32; n];
    let mut gy2 = vec![0.0f32; n];
    r2.par_chunks_mut(w)
        .zip(gx2.par_chunks_mut(w))
        .zip(gy2.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((r2r, gxr), gyr))| {
            for x in 0..w {
                let i = y * w + x;
                let r = sp[i] as f64 - wp[i] as f64;
                r2r[x] = (r * r) as f32;
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(h - 1);
                let gx = (wp[y * w + xp] as f64 - wp[y * w + xm] as f64) * 0.5;
                let gy = (wp[yp * w + x] as f64 - wp[ym * w + x] as f64) * 0.5;
                gxr[x] = (gx * gx) as f32;
                gyr[x] = (gy * gy) as f32;
            }
        });

    let window_mean = |data: &[f32], x: usize, y: usize| -> f64 {
        let x0 = (x as isize - WINDOW_RADIUS).max(0) as usize;
        let x1 = (x as isize + WINDOW_RADIUS).min(w as isize - 1) as usize;
        let y0 = (y as isize - WINDOW_RADIUS).max(0) as usize;
        let y1 = (y as isize + WINDOW_RADIUS).min(h as isize - 1) as usize;
        let mut acc = 0.0f64;
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                acc += data[yy * w + xx] as f64;
            }
        }
        acc / ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64
    };

    let mut lx = vec![0.0f32; n];
    let mut ly = vec![0.0f32; n];
    lx.par_chunks_mut(w)
        .zip(ly.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (lxr, lyr))| {
            for x in 0..w {
                let mr2 = window_mean(&r2, x, y);
                let mgx = window_mean(&gx2, x, y);
                let mgy = window_mean(&gy2, x, y);
                lxr[x] = ((mr2 / (mgx + EPS) + EPS).ln() as f32).clamp(LOGVAR_MIN, LOGVAR_MAX);
                lyr[x] = ((mr2 / (mgy + EPS) + EPS).ln() as f32).clamp(LOGVAR_MIN, LOGVAR_MAX);
            }
        });
    Ok((lx, ly))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Band-limited test texture: seeded noise smoothed enough for the
    /// brightness-constancy linearization to hold.
    pub(crate) fn textured(w: usize, h: usize, seed: u64, blur: f64) -> PlanarImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = PlanarImage::new(w, h, 1);
        for v in img.plane_mut(0) {
            *v = rng.gen_range(0.1..0.9);
        }
        crate::resample::gaussian_blur(&img, blur).unwrap()
    }

    /// Shifts content by (+dx, +dy): out(x) = img(x - d), edge-clamped.
    pub(crate) fn shifted(img: &PlanarImage, dx: f32, dy: f32) -> PlanarImage {
        let flow = FlowField::constant(img.width(), img.height(), -dx, -dy);
        bilinear_warp(img, &flow).unwrap().0
    }

    fn median(values: &mut [f32]) -> f32 {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values[values.len() / 2]
    }

    #[test]
    fn identical_inputs_give_zero_flow() {
        let img = textured(96, 64, 1, 1.0);
        let flow = estimate_flow(&img, &img, &FlowParams::default()).unwrap();
        assert!(flow.max_magnitude() <= 0.05, "max |flow| = {}", flow.max_magnitude());
    }

    #[test]
    fn global_shift_is_recovered() {
        let img = textured(128, 96, 2, 1.0);
        let reference = shifted(&img, 4.0, 0.0);
        let flow = estimate_flow(&img, &reference, &FlowParams::default()).unwrap();
        // Ignore a border band where the shifted image lost content.
        let mut us = Vec::new();
        let mut vs = Vec::new();
        for y in 8..88 {
            for x in 8..120 {
                let (u, v) = flow.displacement(x, y);
                us.push(u);
                vs.push(v.abs());
            }
        }
        let mu = median(&mut us);
        let mv = median(&mut vs);
        assert!((3.7..=4.3).contains(&mu), "median u = {mu}");
        assert!(mv <= 0.3, "median |v| = {mv}");
    }

    #[test]
    fn forward_backward_antisymmetry_on_shift() {
        let img = textured(128, 96, 3, 1.0);
        let reference = shifted(&img, 4.0, 0.0);
        let (fwd, bwd) = estimate_flow_pair(&img, &reference, &FlowParams::default()).unwrap();
        let mut sums: Vec<f32> = Vec::new();
        for y in 8..88 {
            for x in 8..120 {
                let (uf, _) = fwd.displacement(x, y);
                let (ub, _) = bwd.displacement(x, y);
                sums.push((uf + ub).abs());
            }
        }
        let m = median(&mut sums);
        assert!(m <= 0.5, "median |fwd+bwd| = {m}");
    }

    #[test]
    fn aligned_pair_has_low_uncertainty() {
        let img = textured(64, 64, 4, 1.0);
        let flow = FlowField::new(64, 64);
        let (lx, ly) = estimate_uncertainty(&img, &img, &flow).unwrap();
        let near_floor = lx
            .iter()
            .chain(&ly)
            .filter(|v| **v <= LOGVAR_MIN + 1.0)
            .count();
        assert!(near_floor as f64 >= 0.95 * (lx.len() + ly.len()) as f64);
    }

    #[test]
    fn flat_reference_with_residual_hits_upper_clamp() {
        let flat = PlanarImage::constant(48, 48, 1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut noisy = flat.clone();
        for v in noisy.plane_mut(0) {
            *v = (*v + rng.gen_range(-0.3..0.3f32)).clamp(0.0, 1.0);
        }
        let flow = FlowField::new(48, 48);
        let (lx, ly) = estimate_uncertainty(&noisy, &flat, &flow).unwrap();
        // Interior pixels see full 7x7 windows; their residual energy sits
        // orders of magnitude above the clamp threshold.
        for y in 3..45 {
            for x in 3..45 {
                let i = y * 48 + x;
                assert!(lx[i] >= LOGVAR_MAX - 1e-3, "lx[{x},{y}] = {}", lx[i]);
                assert!(ly[i] >= LOGVAR_MAX - 1e-3, "ly[{x},{y}] = {}", ly[i]);
            }
        }
    }

    #[test]
    fn independent_noise_raises_uncertainty() {
        // Frozen from the estimator's own arithmetic: independent uniform
        // noise gives a residual-to-gradient-energy ratio of about 4 in the
        // interior, i.e. log-variance near ln(4), far above the aligned case.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut a = PlanarImage::new(64, 64, 1);
        let mut b = PlanarImage::new(64, 64, 1);
        for v in a.plane_mut(0) {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in b.plane_mut(0) {
            *v = rng.gen_range(0.0..1.0);
        }
        let flow = FlowField::new(64, 64);
        let (lx, _) = estimate_uncertainty(&a, &b, &flow).unwrap();
        let mut vals: Vec<f32> = lx.clone();
        let m = median(&mut vals);
        assert!(m > 0.5, "median logvar on noise = {m}");
        assert!(m < 4.0, "median logvar on noise = {m}");
    }

    #[test]
    fn logvar_always_within_clamp_bounds() {
        let img = textured(48, 48, 5, 1.0);
        let reference = textured(48, 48, 6, 1.0);
        let flow = estimate_flow(&img, &reference, &FlowParams::default()).unwrap();
        assert!(flow
            .logvar_x()
            .iter()
            .chain(flow.logvar_y())
            .all(|v| (LOGVAR_MIN..=LOGVAR_MAX).contains(v)));
    }

    #[test]
    fn resampled_flow_scales_vectors() {
        let flow = FlowField::constant(32, 16, 2.0, 1.0);
        let up = flow.resampled(64, 32).unwrap();
        assert_eq!(up.dims(), (64, 32));
        for i in 0..up.u().len() {
            assert!((up.u()[i] - 4.0).abs() <= 1e-5);
            assert!((up.v()[i] - 2.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn clamp_magnitude_preserves_direction() {
        let mut flow = FlowField::constant(4, 4, 3.0, 4.0);
        flow.clamp_magnitude(2.5);
        let (u, v) = flow.displacement(0, 0);
        assert!((u - 1.5).abs() <= 1e-6);
        assert!((v - 2.0).abs() <= 1e-6);
    }
}
