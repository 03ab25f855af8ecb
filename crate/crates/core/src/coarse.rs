//! Coarse alignment: crop the wide frame to the tele field of view, estimate
//! a global 2-D translation from corner matches, and photometrically match
//! the pair.
//!
//! Corners come from a FAST-style segment test on the 16-pixel Bresenham
//! ring; matching uses zero-mean normalized cross-correlation of local
//! patches, and the translation is the per-axis median of the surviving
//! match displacements.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::rgb_to_yuv;
use crate::error::{FusionError, Result};
use crate::geometry::{CameraMeta, Translation2D};
use crate::image::PlanarImage;
use crate::resample::{resample_region, Kernel};

/// Offsets of the 16-pixel ring at radius 3.
const RING: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Contiguous arc length required for a corner.
const ARC: usize = 9;

/// Tuning for keypoint detection and matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarseParams {
    /// Intensity threshold of the segment test, on `[0, 1]` luma.
    pub fast_threshold: f32,
    /// Maximum displacement considered when pairing keypoints, in pixels.
    pub search_radius: f64,
    /// Half-width of the correlation patch (5 gives 11x11).
    pub patch_radius: usize,
    /// Minimum normalized cross-correlation for an accepted match.
    pub min_ncc: f64,
    /// Fewer surviving matches than this reports low confidence.
    pub min_matches: usize,
    /// Strongest corners kept per image.
    pub max_keypoints: usize,
}

impl Default for CoarseParams {
    fn default() -> Self {
        CoarseParams {
            fast_threshold: 0.06,
            search_radius: 200.0,
            patch_radius: 5,
            min_ncc: 0.7,
            min_matches: 8,
            max_keypoints: 512,
        }
    }
}

impl CoarseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fast_threshold > 0.0) {
            return Err(FusionError::InvalidConfig("fast_threshold must be > 0".into()));
        }
        if !(self.search_radius > 0.0) {
            return Err(FusionError::InvalidConfig("search_radius must be > 0".into()));
        }
        if self.patch_radius == 0 || self.min_matches == 0 || self.max_keypoints == 0 {
            return Err(FusionError::InvalidConfig(
                "patch_radius, min_matches, and max_keypoints must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of [`estimate_translation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationEstimate {
    pub translation: Translation2D,
    /// Set when fewer than `min_matches` displacements survived; the
    /// translation is then the (0, 0) fallback.
    pub low_confidence: bool,
    pub matches: usize,
}

#[derive(Debug, Clone, Copy)]
struct Keypoint {
    x: usize,
    y: usize,
    score: f32,
}

/// Crops `tele_fov_rect` out of the wide frame and bicubically resamples it
/// to the tele resolution, producing the fusion source image.
pub fn crop_and_resample_source(
    w_img: &PlanarImage,
    meta: &CameraMeta,
    target_w: usize,
    target_h: usize,
) -> Result<PlanarImage> {
    let rect = meta.tele_fov_rect;
    if rect.is_empty() || !rect.inside(w_img.width(), w_img.height()) {
        return Err(FusionError::InvalidInput(format!(
            "tele_fov_rect {:?} outside wide frame {}x{}",
            rect,
            w_img.width(),
            w_img.height()
        )));
    }
    resample_region(
        w_img,
        (rect.x, rect.y),
        (rect.width, rect.height),
        target_w,
        target_h,
        Kernel::Bicubic,
    )
}

fn to_luma(img: &PlanarImage) -> Result<PlanarImage> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => Ok(rgb_to_yuv(img)?.0),
        n => Err(FusionError::InvalidInput(format!(
            "expected 1- or 3-channel image, got {n} channels"
        ))),
    }
}

/// Segment-test score map: sum of absolute ring differences when at least
/// `ARC` contiguous ring pixels are all brighter or all darker than the
/// center by the threshold, zero otherwise.
fn fast_scores(luma: &PlanarImage, threshold: f32) -> Vec<f32> {
    let (w, h) = luma.dims();
    let p = luma.plane(0);
    let mut scores = vec![0.0f32; w * h];
    if w < 7 || h < 7 {
        return scores;
    }
    scores
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            if y < 3 || y >= h - 3 {
                return;
            }
            for x in 3..w - 3 {
                let c = p[y * w + x];
                let mut ring = [0.0f32; 16];
                for (k, (dx, dy)) in RING.iter().enumerate() {
                    ring[k] = p[(y as i32 + dy) as usize * w + (x as i32 + dx) as usize];
                }
                // Quick reject on the two horizontal/vertical cardinal pairs.
                let bright_card = (ring[0] > c + threshold) as u8
                    + (ring[4] > c + threshold) as u8
                    + (ring[8] > c + threshold) as u8
                    + (ring[12] > c + threshold) as u8;
                let dark_card = (ring[0] < c - threshold) as u8
                    + (ring[4] < c - threshold) as u8
                    + (ring[8] < c - threshold) as u8
                    + (ring[12] < c - threshold) as u8;
                if bright_card < 3 && dark_card < 3 {
                    continue;
                }
                let mut best_run_bright = 0usize;
                let mut best_run_dark = 0usize;
                let mut run_bright = 0usize;
                let mut run_dark = 0usize;
                for k in 0..32 {
                    let v = ring[k % 16];
                    if v > c + threshold {
                        run_bright += 1;
                        best_run_bright = best_run_bright.max(run_bright);
                    } else {
                        run_bright = 0;
                    }
                    if v < c - threshold {
                        run_dark += 1;
                        best_run_dark = best_run_dark.max(run_dark);
                    } else {
                        run_dark = 0;
                    }
                }
                if best_run_bright.min(32) >= ARC || best_run_dark >= ARC {
                    let score: f32 = ring
                        .iter()
                        .map(|v| {
                            let d = (v - c).abs();
                            if d > threshold {
                                d - threshold
                            } else {
                                0.0
                            }
                        })
                        .sum();
                    row[x] = score;
                }
            }
        });
    scores
}

/// 3x3 non-maximal suppression with raster-order tie-breaking, then keeps
/// the strongest `max_keypoints`.
fn detect_keypoints(luma: &PlanarImage, params: &CoarseParams) -> Vec<Keypoint> {
    let (w, h) = luma.dims();
    let scores = fast_scores(luma, params.fast_threshold);
    let margin = params.patch_radius.max(3);
    let mut kps: Vec<Keypoint> = Vec::new();
    for y in margin..h.saturating_sub(margin) {
        for x in margin..w.saturating_sub(margin) {
            let s = scores[y * w + x];
            if s <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let q = ((y as i32 + dy) as usize) * w + (x as i32 + dx) as usize;
                    let sq = scores[q];
                    if sq > s || (sq == s && (dy < 0 || (dy == 0 && dx < 0))) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                kps.push(Keypoint { x, y, score: s });
            }
        }
    }
    kps.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    kps.truncate(params.max_keypoints);
    kps
}

/// Zero-mean NCC between two square patches; 0 when either patch is flat.
fn ncc(pa: &[f32], wa: usize, ax: usize, ay: usize, pb: &[f32], wb: usize, bx: usize, by: usize, r: usize) -> f64 {
    let mut sum_a = 0.0f64;
    let mut sum_b = 0.0f64;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    for dy in 0..=2 * r {
        for dx in 0..=2 * r {
            sum_a += pa[(ay + dy - r) * wa + (ax + dx - r)] as f64;
            sum_b += pb[(by + dy - r) * wb + (bx + dx - r)] as f64;
        }
    }
    let ma = sum_a / n;
    let mb = sum_b / n;
    let mut cov = 0.0f64;
    let mut va = 0.0f64;
    let mut vb = 0.0f64;
    for dy in 0..=2 * r {
        for dx in 0..=2 * r {
            let a = pa[(ay + dy - r) * wa + (ax + dx - r)] as f64 - ma;
            let b = pb[(by + dy - r) * wb + (bx + dx - r)] as f64 - mb;
            cov += a * b;
            va += a * a;
            vb += b * b;
        }
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Estimates the global translation from `src` to `reference`: content at
/// `p` in `src` sits at `p + t` in `reference`.
///
/// Degrades to a `(0, 0)` low-confidence fallback when fewer than
/// `min_matches` correlation matches survive; never errors.
pub fn estimate_translation(
    src: &PlanarImage,
    reference: &PlanarImage,
    params: &CoarseParams,
) -> Result<TranslationEstimate> {
    let src_luma = to_luma(src)?;
    let ref_luma = to_luma(reference)?;

    let src_kps = detect_keypoints(&src_luma, params);
    let ref_kps = detect_keypoints(&ref_luma, params);

    let fallback = TranslationEstimate {
        translation: Translation2D::default(),
        low_confidence: true,
        matches: 0,
    };
    if src_kps.is_empty() || ref_kps.is_empty() {
        return Ok(fallback);
    }

    // Bucket reference keypoints so radius queries stay cheap on large
    // frames.
    let cell = (params.search_radius.ceil() as usize).max(1);
    let (rw, rh) = ref_luma.dims();
    let gw = rw / cell + 1;
    let gh = rh / cell + 1;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    for (i, kp) in ref_kps.iter().enumerate() {
        grid[(kp.y / cell) * gw + kp.x / cell].push(i);
    }

    let sp = src_luma.plane(0);
    let rp = ref_luma.plane(0);
    let sw = src_luma.width();
    let r = params.patch_radius;
    let radius = params.search_radius;

    let displacements: Vec<(f64, f64)> = src_kps
        .par_iter()
        .filter_map(|kp| {
            let cx = kp.x / cell;
            let cy = kp.y / cell;
            let mut best: Option<(f64, (f64, f64))> = None;
            for gy in cy.saturating_sub(1)..=(cy + 1).min(gh - 1) {
                for gx in cx.saturating_sub(1)..=(cx + 1).min(gw - 1) {
                    for &ri in &grid[gy * gw + gx] {
                        let rkp = &ref_kps[ri];
                        let dx = rkp.x as f64 - kp.x as f64;
                        let dy = rkp.y as f64 - kp.y as f64;
                        if dx.abs() > radius || dy.abs() > radius {
                            continue;
                        }
                        let score = ncc(sp, sw, kp.x, kp.y, rp, rw, rkp.x, rkp.y, r);
                        if score >= params.min_ncc
                            && best.map_or(true, |(b, _)| score > b)
                        {
                            best = Some((score, (dx, dy)));
                        }
                    }
                }
            }
            best.map(|(_, d)| d)
        })
        .collect();

    if displacements.len() < params.min_matches {
        return Ok(fallback);
    }
    let dx = median_of(displacements.iter().map(|d| d.0).collect());
    let dy = median_of(displacements.iter().map(|d| d.1).collect());
    Ok(TranslationEstimate {
        translation: Translation2D::new(dx, dy),
        low_confidence: false,
        matches: displacements.len(),
    })
}
