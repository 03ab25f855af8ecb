//! The four robustness maps that gate detail fusion: defocus, occlusion,
//! flow uncertainty, and alignment rejection.
//!
//! Polarity convention: 1 means "exclude from fusion" for every map.
//! Per-pixel math runs in f64 and is kept strictly local, so each map can be
//! checked against a naive reference implementation to 1e-6.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::flow::FlowField;
use crate::geometry::Rect;
use crate::image::{Mask, PlanarImage};
use crate::resample::downup;

/// Defocus map tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefocusParams {
    /// Flow-distance threshold tolerated as "in focus", in flow-grid pixels.
    pub gamma: f64,
    /// Sigmoid smoothness, in flow-grid pixels.
    pub sigma_f: f64,
    pub k_clusters: usize,
    pub kmeans_iters: usize,
    /// Reserved for randomized initializers; the default quantile seeding is
    /// deterministic and ignores it.
    pub seed: u64,
}

impl Default for DefocusParams {
    fn default() -> Self {
        DefocusParams {
            gamma: 2.0,
            sigma_f: 1.0,
            k_clusters: 3,
            kmeans_iters: 10,
            seed: 0,
        }
    }
}

impl DefocusParams {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(FusionError::InvalidConfig("defocus gamma must be >= 0".into()));
        }
        if !(self.sigma_f > 0.0) {
            return Err(FusionError::InvalidConfig("defocus sigma_f must be > 0".into()));
        }
        if self.k_clusters < 1 || self.kmeans_iters < 1 {
            return Err(FusionError::InvalidConfig(
                "defocus k_clusters and kmeans_iters must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Where the focal plane sits in flow space.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusEstimate {
    /// Flow vector of the focused center (centroid of the largest cluster).
    pub focus_flow: (f64, f64),
    pub cluster_sizes: Vec<usize>,
    /// Index of the largest cluster.
    pub chosen_cluster: usize,
    /// Set when the ROI was empty; the defocus mask is then all zero.
    pub degenerate: bool,
}

/// Occlusion map tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionParams {
    /// Round-trip error scale: an error of `1/s` pixels saturates the mask.
    pub s: f64,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        OcclusionParams { s: 0.5 }
    }
}

impl OcclusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0) {
            return Err(FusionError::InvalidConfig("occlusion s must be > 0".into()));
        }
        Ok(())
    }
}

/// Flow uncertainty map tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyParams {
    /// Standard deviation (in flow-grid pixels) treated as full uncertainty.
    pub s_max: f64,
}

impl Default for UncertaintyParams {
    fn default() -> Self {
        UncertaintyParams { s_max: 8.0 }
    }
}

impl UncertaintyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_max > 0.0) {
            return Err(FusionError::InvalidConfig("uncertainty s_max must be > 0".into()));
        }
        Ok(())
    }
}

/// Alignment rejection map tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RejectionParams {
    /// Patch side length in pixels.
    pub patch: usize,
    /// Patch grid stride in pixels.
    pub stride: usize,
    /// Variance floor tolerating minor source/reference differences.
    pub epsilon0: f64,
}

impl Default for RejectionParams {
    fn default() -> Self {
        RejectionParams {
            patch: 16,
            stride: 8,
            epsilon0: 1e-4,
        }
    }
}

impl RejectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.stride == 0 {
            return Err(FusionError::InvalidConfig("rejection patch and stride must be >= 1".into()));
        }
        if self.stride > self.patch {
            return Err(FusionError::InvalidConfig("rejection stride must be <= patch".into()));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(FusionError::InvalidConfig("rejection epsilon0 must be > 0".into()));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Deterministic Lloyd k-means over 2-D flow vectors. Centroids start at
/// evenly spaced quantiles of flow magnitude measured about the mean flow
/// (centering keeps the whole procedure equivariant under constant flow
/// offsets); ties in assignment go to the lowest centroid index; empty
/// clusters keep their previous centroid.
fn kmeans_flow(samples: &[(f64, f64)], k: usize, iters: usize) -> (Vec<(f64, f64)>, Vec<usize>) {
    let n = samples.len();
    let k = k.min(n).max(1);

    let mean = samples
        .iter()
        .fold((0.0f64, 0.0f64), |acc, s| (acc.0 + s.0, acc.1 + s.1));
    let mean = (mean.0 / n as f64, mean.1 / n as f64);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ma = (samples[a].0 - mean.0).powi(2) + (samples[a].1 - mean.1).powi(2);
        let mb = (samples[b].0 - mean.0).powi(2) + (samples[b].1 - mean.1).powi(2);
        ma.partial_cmp(&mb)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut centroids: Vec<(f64, f64)> = (0..k)
        .map(|i| samples[order[((i as f64 + 0.5) / k as f64 * n as f64) as usize]])
        .collect();

    let mut assignment = vec![0usize; n];
    for _ in 0..iters {
        for (i, s) in samples.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let d = (s.0 - cen.0).powi(2) + (s.1 - cen.1).powi(2);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (i, s) in samples.iter().enumerate() {
            let a = assignment[i];
            sums[a].0 += s.0;
            sums[a].1 += s.1;
            sums[a].2 += 1;
        }
        for (c, (sx, sy, count)) in sums.into_iter().enumerate() {
            if count > 0 {
                centroids[c] = (sx / count as f64, sy / count as f64);
            }
        }
    }
    let mut sizes = vec![0usize; k];
    for &a in &assignment {
        sizes[a] += 1;
    }
    (centroids, sizes)
}

/// Defocus map: k-means over the flow vectors inside the autofocus ROI finds
/// the focused center's flow; each pixel's mask value is a sigmoid of its
/// flow distance to that center. 0 = in focus, 1 = defocused.
///
/// An empty ROI yields an all-zero mask and a degenerate estimate.
pub fn defocus_map(fwd: &FlowField, focus_roi: Rect, params: &DefocusParams) -> Result<(Mask, FocusEstimate)> {
    params.validate()?;
    let (w, h) = fwd.dims();
    if !focus_roi.is_empty() && !focus_roi.inside(w, h) {
        return Err(FusionError::InvalidInput(format!(
            "focus_roi {focus_roi:?} outside flow bounds {w}x{h}"
        )));
    }

    let x0 = focus_roi.x.round().max(0.0) as usize;
    let y0 = focus_roi.y.round().max(0.0) as usize;
    let x1 = ((focus_roi.x + focus_roi.width).round() as usize).min(w);
    let y1 = ((focus_roi.y + focus_roi.height).round() as usize).min(h);

    let mut samples = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let (u, v) = fwd.displacement(x, y);
            samples.push((u as f64, v as f64));
        }
    }
    if samples.is_empty() {
        return Ok((
            Mask::new(w, h),
            FocusEstimate {
                focus_flow: (0.0, 0.0),
                cluster_sizes: Vec::new(),
                chosen_cluster: 0,
                degenerate: true,
            },
        ));
    }

    let (centroids, sizes) = kmeans_flow(&samples, params.k_clusters, params.kmeans_iters);
    let chosen = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let focus_flow = centroids[chosen];

    let mut mask = Mask::new(w, h);
    let u = fwd.u();
    let v = fwd.v();
    let gamma = params.gamma;
    let sigma_f = params.sigma_f;
    mask.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, m) in row.iter_mut().enumerate() {
                let i = y * w + x;
                let du = u[i] as f64 - focus_flow.0;
                let dv = v[i] as f64 - focus_flow.1;
                let dist = (du * du + dv * dv).sqrt();
                *m = sigmoid((dist - gamma) / sigma_f) as f32;
            }
        });
    Ok((
        mask,
        FocusEstimate {
            focus_flow,
            cluster_sizes: sizes,
            chosen_cluster: chosen,
            degenerate: false,
        },
    ))
}

/// Edge-clamped bilinear sample in f64, used for flow-field composition.
fn sample_plane_f64(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let tx = xc - x0 as f64;
    let ty = yc - y0 as f64;
    let top = plane[y0 * w + x0] as f64 * (1.0 - tx) + plane[y0 * w + x1] as f64 * tx;
    let bot = plane[y1 * w + x0] as f64 * (1.0 - tx) + plane[y1 * w + x1] as f64 * tx;
    top * (1.0 - ty) + bot * ty
}

/// Occlusion map from forward-backward consistency: follow the forward flow,
/// sample the backward flow there, and measure how far the round trip lands
/// from the start: `min(s * ||roundtrip - x||, 1)`.
pub fn occlusion_map(fwd: &FlowField, bwd: &FlowField, params: &OcclusionParams) -> Result<Mask> {
    params.validate()?;
    let (w, h) = fwd.dims();
    if bwd.dims() != (w, h) {
        return Err(FusionError::dims((w, h), bwd.dims(), "occlusion_map"));
    }
    let mut mask = Mask::new(w, h);
    let fu = fwd.u();
    let fv = fwd.v();
    let bu = bwd.u();
    let bv = bwd.v();
    let s = params.s;
    mask.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, m) in row.iter_mut().enumerate() {
                let i = y * w + x;
                let tx = x as f64 + fu[i] as f64;
                let ty = y as f64 + fv[i] as f64;
                let rx = tx + sample_plane_f64(bu, w, h, tx, ty);
                let ry = ty + sample_plane_f64(bv, w, h, tx, ty);
                let err = ((rx - x as f64).powi(2) + (ry - y as f64).powi(2)).sqrt();
                *m = (s * err).min(1.0) as f32;
            }
        });
    Ok(mask)
}

/// Flow uncertainty map: per-axis log-variances are converted to a pixel
/// standard deviation `S = sqrt(exp(lv_x) + exp(lv_y))` and normalized by
/// `s_max`.
pub fn flow_uncertainty_map(flow: &FlowField, params: &UncertaintyParams) -> Result<Mask> {
    params.validate()?;
    let (w, h) = flow.dims();
    let lx = flow.logvar_x();
    let ly = flow.logvar_y();
    let s_max = params.s_max;
    let mut mask = Mask::new(w, h);
    mask.data_mut()
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, m) in row.iter_mut().enumerate() {
                let i = y * w + x;
                let s = ((lx[i] as f64).exp() + (ly[i] as f64).exp()).sqrt();
                *m = (s.min(s_max) / s_max) as f32;
            }
        });
    Ok(mask)
}

/// Patch statistics for the rejection map.
fn patch_value(
    src: &[f32],
    refd: &[f32],
    w: usize,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    epsilon0: f64,
) -> f32 {
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let mut sum_s = 0.0f64;
    let mut sum_r = 0.0f64;
    for y in y0..y1 {
        for x in x0..x1 {
            sum_s += src[y * w + x] as f64;
            sum_r += refd[y * w + x] as f64;
        }
    }
    let mu_s = sum_s / n;
    let mu_r = sum_r / n;
    let mut msd = 0.0f64; // mean squared normalized difference
    let mut var_s = 0.0f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let a = src[y * w + x] as f64 - mu_s;
            let b = refd[y * w + x] as f64 - mu_r;
            msd += (a - b) * (a - b);
            var_s += a * a;
        }
    }
    msd /= n;
    var_s /= n;
    (1.0 - (-msd / (var_s + epsilon0)).exp()) as f32
}

/// Alignment rejection map: mean-removed patch difference between the source
/// luma and the warped reference luma after the reference is taken down to
/// the source's optical resolution (`downup` by the focal ratio).
///
/// Values land on a `ceil(W/stride) x ceil(H/stride)` grid (one value per
/// patch origin); blending upsamples the grid bilinearly. An image smaller
/// than one patch collapses to a single global patch.
pub fn rejection_map(
    y_src: &PlanarImage,
    y_ref_warped: &PlanarImage,
    focal_ratio: f64,
    params: &RejectionParams,
) -> Result<Mask> {
    params.validate()?;
    if y_src.channels() != 1 || y_ref_warped.channels() != 1 {
        return Err(FusionError::InvalidInput(
            "rejection_map expects single-channel luma inputs".into(),
        ));
    }
    let (w, h) = y_src.dims();
    if y_ref_warped.dims() != (w, h) {
        return Err(FusionError::dims((w, h), y_ref_warped.dims(), "rejection_map"));
    }
    let ref_down = downup(y_ref_warped, focal_ratio)?;
    let sp = y_src.plane(0);
    let rp = ref_down.plane(0);

    let (patch, stride) = (params.patch, params.stride);
    if w < patch || h < patch {
        let v = patch_value(sp, rp, w, 0, 0, w, h, params.epsilon0);
        return Mask::from_data(1, 1, vec![v.clamp(0.0, 1.0)]);
    }
    let gw = w.div_ceil(stride);
    let gh = h.div_ceil(stride);
    let mut grid = Mask::new(gw, gh);
    let eps = params.epsilon0;
    grid.data_mut()
        .par_chunks_mut(gw)
        .enumerate()
        .for_each(|(gy, row)| {
            let y0 = (gy * stride).min(h - 1);
            let y1 = (y0 + patch).min(h);
            for (gx, out) in row.iter_mut().enumerate() {
                let x0 = (gx * stride).min(w - 1);
                let x1 = (x0 + patch).min(w);
                *out = patch_value(sp, rp, w, x0, y0, x1, y1, eps).clamp(0.0, 1.0);
            }
        });
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resample::{resample, Kernel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roi(x: f64, y: f64, w: f64, h: f64) -> Rect {
        Rect::new(x, y, w, h)
    }

    #[test]
    fn uniform_flow_gives_uniform_defocus_floor() {
        let flow = FlowField::constant(32, 24, 1.5, -0.5);
        let p = DefocusParams {
            gamma: 2.0,
            sigma_f: 0.5,
            ..DefocusParams::default()
        };
        let (mask, est) = defocus_map(&flow, roi(4.0, 4.0, 8.0, 8.0), &p).unwrap();
        assert!(!est.degenerate);
        // Every pixel sits exactly on the focal plane: sigmoid(-gamma/sigma_f).
        let expect = (1.0 / (1.0 + (2.0f64 / 0.5).exp())) as f32;
        for v in mask.data() {
            assert!((v - expect).abs() <= 1e-6, "{v} vs {expect}");
        }
        assert!((expect - 0.018).abs() < 0.001);
    }

    #[test]
    fn distance_equal_gamma_gives_exactly_half() {
        // Focus cluster at flow (0,0); a probe pixel at distance exactly gamma.
        let mut flow = FlowField::new(16, 16);
        flow.u_mut()[5] = 2.0; // pixel (5,0): distance 2 == gamma
        let p = DefocusParams::default();
        let (mask, est) = defocus_map(&flow, roi(4.0, 4.0, 8.0, 8.0), &p).unwrap();
        assert_eq!(est.focus_flow, (0.0, 0.0));
        assert!((mask.get(5, 0) - 0.5).abs() <= 1e-6);
    }

    #[test]
    fn two_cluster_flow_picks_majority() {
        // 70% of the ROI at (0,0), 30% at (10,0).
        let mut flow = FlowField::new(20, 10);
        for y in 0..10 {
            for x in 14..20 {
                let i = y * 20 + x;
                flow.u_mut()[i] = 10.0;
            }
        }
        let p = DefocusParams::default();
        let (mask, est) = defocus_map(&flow, roi(0.0, 0.0, 20.0, 10.0), &p).unwrap();
        assert!(!est.degenerate);
        assert!((est.focus_flow.0).abs() <= 1e-9 && (est.focus_flow.1).abs() <= 1e-9);
        assert_eq!(est.chosen_cluster, est.cluster_sizes.iter().enumerate().max_by_key(|(_, s)| **s).unwrap().0);
        // Far cluster: sigmoid((10 - gamma) / sigma_f).
        let expect = (1.0 / (1.0 + (-(10.0f64 - 2.0) / 1.0).exp())) as f32;
        assert!((mask.get(16, 5) - expect).abs() <= 1e-6);
    }

    #[test]
    fn empty_roi_is_degenerate() {
        let flow = FlowField::constant(16, 16, 1.0, 0.0);
        let (mask, est) = defocus_map(&flow, roi(3.0, 3.0, 0.0, 0.0), &DefocusParams::default()).unwrap();
        assert!(est.degenerate);
        assert!(mask.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kmeans_matches_brute_force_on_two_point_distribution() {
        // 2-point distribution: brute-force optimum has one centroid on each
        // point mass; the larger mass wins.
        let samples: Vec<(f64, f64)> = (0..100)
            .map(|i| if i < 70 { (0.0, 0.0) } else { (10.0, 0.0) })
            .collect();
        let (centroids, sizes) = kmeans_flow(&samples, 2, 10);
        let mut pairs: Vec<_> = centroids.iter().zip(&sizes).collect();
        pairs.sort_by(|a, b| b.1.cmp(a.1));
        assert_eq!(*pairs[0].1, 70);
        assert!((pairs[0].0 .0).abs() < 1e-12);
        assert_eq!(*pairs[1].1, 30);
        assert!((pairs[1].0 .0 - 10.0).abs() < 1e-12);
    }

    #[test]
    fn consistent_constant_flows_give_zero_occlusion() {
        let fwd = FlowField::constant(24, 16, 3.0, -2.0);
        let bwd = FlowField::constant(24, 16, -3.0, 2.0);
        let mask = occlusion_map(&fwd, &bwd, &OcclusionParams::default()).unwrap();
        assert!(mask.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn inconsistent_flows_give_half() {
        // fwd (2,0), bwd (-1,0): round trip misses by 1 px; s = 0.5 -> 0.5.
        let fwd = FlowField::constant(24, 16, 2.0, 0.0);
        let bwd = FlowField::constant(24, 16, -1.0, 0.0);
        let mask = occlusion_map(&fwd, &bwd, &OcclusionParams { s: 0.5 }).unwrap();
        for v in mask.data() {
            assert!((v - 0.5).abs() <= 1e-6);
        }
    }

    #[test]
    fn huge_s_saturates() {
        let fwd = FlowField::constant(8, 8, 1.0, 0.0);
        let bwd = FlowField::constant(8, 8, -0.5, 0.0);
        let mask = occlusion_map(&fwd, &bwd, &OcclusionParams { s: 1e9 }).unwrap();
        assert!(mask.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn uncertainty_formula_spot_values() {
        let mut flow = FlowField::new(8, 8);
        flow.logvar_x_mut().fill(2.0f32.ln());
        flow.logvar_y_mut().fill(2.0f32.ln());
        let mask = flow_uncertainty_map(&flow, &UncertaintyParams { s_max: 8.0 }).unwrap();
        for v in mask.data() {
            assert!((v - 0.25).abs() <= 1e-6); // S = 2, 2/8 = 0.25
        }

        // Lower clamp: logvar = ln 1e-4 on both axes.
        let mut low = FlowField::new(4, 4);
        low.logvar_x_mut().fill((1e-4f32).ln());
        low.logvar_y_mut().fill((1e-4f32).ln());
        let mask = flow_uncertainty_map(&low, &UncertaintyParams::default()).unwrap();
        let expect = (2.0e-4f64).sqrt() / 8.0;
        for v in mask.data() {
            assert!((*v as f64 - expect).abs() <= 1e-6);
        }

        // Saturation: S >= s_max clamps to exactly 1.
        let mut hi = FlowField::new(4, 4);
        hi.logvar_x_mut().fill(64.0f32.ln());
        hi.logvar_y_mut().fill(64.0f32.ln());
        let mask = flow_uncertainty_map(&hi, &UncertaintyParams { s_max: 8.0 }).unwrap();
        assert!(mask.data().iter().all(|v| *v == 1.0));
    }

    /// Band-limited source: a bilinear upsample carries nothing above the
    /// downup cutoff. At odd integer ratios the center-aligned grids land on
    /// interpolation nodes, making downup exact on such an image.
    fn band_limited(w: usize, h: usize, ratio: usize, seed: u64) -> PlanarImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut low = PlanarImage::new(w / ratio, h / ratio, 1);
        for v in low.plane_mut(0) {
            *v = rng.gen_range(0.2..0.8);
        }
        resample(&low, w, h, Kernel::Bilinear).unwrap()
    }

    #[test]
    fn rejection_zero_for_offset_reference() {
        let src = band_limited(48, 48, 3, 21);
        let mut reference = src.clone();
        for v in reference.samples_mut() {
            *v = (*v + 0.1).min(1.0);
        }
        let mask = rejection_map(&src, &reference, 3.0, &RejectionParams::default()).unwrap();
        for v in mask.data() {
            assert!(*v <= 1e-6, "rejection {v} on offset-only pair");
        }
    }

    #[test]
    fn rejection_flat_source_with_noise_matches_formula() {
        let w = 16;
        let h = 16;
        let src = PlanarImage::constant(w, h, 1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut reference = src.clone();
        for v in reference.plane_mut(0) {
            *v = (*v + rng.gen_range(-0.05..0.05f32)).clamp(0.0, 1.0);
        }
        let p = RejectionParams::default();
        let mask = rejection_map(&src, &reference, 2.0, &p).unwrap();

        // Oracle: flat source means var_s = 0; expected value is
        // 1 - exp(-mean(Pd^2) / eps0) with Pd the mean-removed downup noise.
        let rd = downup(&reference, 2.0).unwrap();
        let rdp = rd.plane(0);
        let first = {
            let n = (p.patch * p.patch) as f64;
            let mu: f64 = (0..p.patch)
                .flat_map(|y| (0..p.patch).map(move |x| (x, y)))
                .map(|(x, y)| rdp[y * w + x] as f64)
                .sum::<f64>()
                / n;
            let msd: f64 = (0..p.patch)
                .flat_map(|y| (0..p.patch).map(move |x| (x, y)))
                .map(|(x, y)| {
                    let d = (0.5 - 0.5) - (rdp[y * w + x] as f64 - mu);
                    d * d
                })
                .sum::<f64>()
                / n;
            1.0 - (-msd / p.epsilon0).exp()
        };
        assert!((mask.get(0, 0) as f64 - first).abs() <= 1e-6);
    }

    #[test]
    fn rejection_small_image_is_single_patch() {
        let src = PlanarImage::constant(8, 8, 1, 0.5);
        let mask = rejection_map(&src, &src, 2.0, &RejectionParams::default()).unwrap();
        assert_eq!(mask.dims(), (1, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn defocus_invariant_to_constant_flow_offset(
            off_u in -5.0f32..5.0,
            off_v in -5.0f32..5.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut flow = FlowField::new(24, 18);
            for v in flow.u_mut() { *v = rng.gen_range(-3.0..3.0); }
            for v in flow.v_mut() { *v = rng.gen_range(-3.0..3.0); }
            let mut shifted_flow = flow.clone();
            for v in shifted_flow.u_mut() { *v += off_u; }
            for v in shifted_flow.v_mut() { *v += off_v; }

            let r = roi(2.0, 2.0, 12.0, 10.0);
            let p = DefocusParams::default();
            let (a, _) = defocus_map(&flow, r, &p).unwrap();
            let (b, _) = defocus_map(&shifted_flow, r, &p).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-5);
            }
        }

        #[test]
        fn occlusion_monotone_in_s(
            s1 in 0.1f64..2.0,
            ds in 0.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut fwd = FlowField::new(16, 12);
            let mut bwd = FlowField::new(16, 12);
            for v in fwd.u_mut() { *v = rng.gen_range(-2.0..2.0); }
            for v in fwd.v_mut() { *v = rng.gen_range(-2.0..2.0); }
            for v in bwd.u_mut() { *v = rng.gen_range(-2.0..2.0); }
            for v in bwd.v_mut() { *v = rng.gen_range(-2.0..2.0); }
            let a = occlusion_map(&fwd, &bwd, &OcclusionParams { s: s1 }).unwrap();
            let b = occlusion_map(&fwd, &bwd, &OcclusionParams { s: s1 + ds }).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(y >= x);
                prop_assert!((0.0..=1.0).contains(x) && (0.0..=1.0).contains(y));
            }
        }

        #[test]
        fn uncertainty_monotone_in_logvar(
            base in -8.0f32..8.0,
            bump in 0.0f32..2.0,
        ) {
            let mut lo = FlowField::new(6, 6);
            lo.logvar_x_mut().fill(base);
            lo.logvar_y_mut().fill(base);
            let mut hi = FlowField::new(6, 6);
            hi.logvar_x_mut().fill(base + bump);
            hi.logvar_y_mut().fill(base);
            let p = UncertaintyParams::default();
            let a = flow_uncertainty_map(&lo, &p).unwrap();
            let b = flow_uncertainty_map(&hi, &p).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn rejection_invariant_to_patch_brightness_offsets(
            offset in -0.2f32..0.2,
            seed in 0u64..1000,
        ) {
            let src = band_limited(32, 32, 2, seed);
            let reference = band_limited(32, 32, 2, seed.wrapping_add(7));
            let mut shifted_src = src.clone();
            // Offset every pixel; stay in range so no clamping applies.
            for v in shifted_src.samples_mut() { *v = (*v + offset * 0.5).clamp(0.0, 1.0); }
            let p = RejectionParams::default();
            let a = rejection_map(&src, &reference, 2.0, &p).unwrap();
            let b = rejection_map(&shifted_src, &reference, 2.0, &p).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-5);
            }
        }

        #[test]
        fn all_masks_stay_in_unit_range(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut fwd = FlowField::new(20, 14);
            let mut bwd = FlowField::new(20, 14);
            for v in fwd.u_mut() { *v = rng.gen_range(-4.0..4.0); }
            for v in fwd.v_mut() { *v = rng.gen_range(-4.0..4.0); }
            for v in bwd.u_mut() { *v = rng.gen_range(-4.0..4.0); }
            for v in bwd.v_mut() { *v = rng.gen_range(-4.0..4.0); }
            for v in fwd.logvar_x_mut() {
                *v = rng.gen_range(crate::flow::LOGVAR_MIN..crate::flow::LOGVAR_MAX);
            }
            for v in fwd.logvar_y_mut() {
                *v = rng.gen_range(crate::flow::LOGVAR_MIN..crate::flow::LOGVAR_MAX);
            }
            let occ = occlusion_map(&fwd, &bwd, &OcclusionParams::default()).unwrap();
            let unc = flow_uncertainty_map(&fwd, &UncertaintyParams::default()).unwrap();
            let (def, _) = defocus_map(&fwd, roi(2.0, 2.0, 10.0, 8.0), &DefocusParams::default()).unwrap();
            for m in [&occ, &unc, &def] {
                prop_assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
