//! Synthetic dual-camera scene generator.
//!
//! Renders a wide/tele pair from a layered ground-truth scene: the tele view
//! composites each layer with its own disparity shift and defocus blur, gets
//! a photometric gain and sensor noise; the wide view sees the same scene
//! through a simulated optical gap (Gaussian blur before downsampling by the
//! focal ratio) and is embedded into a larger frame at the tele-FOV rect.
//! Per-pixel flow, occlusion, and defocus labels come along for free, which
//! makes the generator the verification oracle for the full pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::geometry::{CameraMeta, Rect, Translation2D};
use crate::image::{Mask, PlanarImage};
use crate::resample::{gaussian_blur, resample_region, Kernel};
use crate::warp::sample_bilinear;

/// Geometric region of one scene layer, in tele pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    /// Whole frame; required for the background layer.
    Full,
    Rect { x: f64, y: f64, width: f64, height: f64 },
    Circle { cx: f64, cy: f64, radius: f64 },
}

impl RegionSpec {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            RegionSpec::Full => true,
            RegionSpec::Rect {
                x: rx,
                y: ry,
                width,
                height,
            } => x >= *rx && x < rx + width && y >= *ry && y < ry + height,
            RegionSpec::Circle { cx, cy, radius } => {
                let dx = x - cx;
                let dy = y - cy;
                dx * dx + dy * dy <= radius * radius
            }
        }
    }
}

/// One depth layer: a region of the frame, its stereo disparity in the tele
/// view, and its tele defocus blur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub region: RegionSpec,
    /// Disparity vector in tele pixels (flow from source to reference).
    pub disparity: [f64; 2],
    /// Tele defocus blur sigma in pixels; 0 = in focus.
    #[serde(default)]
    pub blur_sigma: f64,
}

/// JSON scene description consumed by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    /// Tele resolution.
    pub width: usize,
    pub height: usize,
    pub focal_ratio: f64,
    /// Global wide-to-tele offset in tele pixels, removed by coarse
    /// alignment.
    #[serde(default)]
    pub translation: [f64; 2],
    /// Additive Gaussian noise sigma on the tele image, in sample units.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Per-channel photometric gain applied to the tele image.
    #[serde(default = "default_gain")]
    pub color_gain: [f64; 3],
    pub seed: u64,
    /// Wide-frame border around the tele FOV, in wide pixels.
    #[serde(default = "default_margin")]
    pub margin: usize,
    /// Autofocus ROI in tele pixels; defaults to the centered quarter frame.
    #[serde(default)]
    pub focus_roi: Option<[f64; 4]>,
    /// Upper bound on layer disparity magnitude.
    #[serde(default = "default_max_disparity")]
    pub max_disparity: f64,
    /// Painter's order: the first layer is the background and must be Full.
    pub layers: Vec<LayerSpec>,
}

fn default_gain() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

fn default_margin() -> usize {
    32
}

fn default_max_disparity() -> f64 {
    32.0
}

/// A realized scene: the rendered ground-truth image plus everything needed
/// to synthesize and label a pair.
#[derive(Debug, Clone)]
pub struct RigScene {
    pub gt_image: PlanarImage,
    pub layers: Vec<LayerSpec>,
    pub noise_sigma: f64,
    pub color_gain: [f64; 3],
    pub translation: Translation2D,
    pub focal_ratio: f64,
    pub seed: u64,
    pub margin: usize,
    pub focus_roi: Rect,
}

/// Ground-truth labels for a synthesized pair, at tele resolution.
#[derive(Debug, Clone)]
pub struct PairLabels {
    /// Residual flow after ideal coarse alignment: each pixel carries its
    /// layer's disparity.
    pub gt_flow: crate::flow::FlowField,
    /// Pixels of the source view hidden in the tele view by layer shifts.
    pub gt_occlusion: Mask,
    /// Pixels belonging to defocused layers.
    pub gt_defocus_region: Mask,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(FusionError::InvalidScene(format!(
                "scene must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.focal_ratio > 1.0) {
            return Err(FusionError::InvalidScene(format!(
                "focal_ratio must be > 1, got {}",
                self.focal_ratio
            )));
        }
        if self.layers.is_empty() {
            return Err(FusionError::InvalidScene("scene needs at least one layer".into()));
        }
        if self.layers[0].region != RegionSpec::Full {
            return Err(FusionError::InvalidScene(
                "layer 0 is the background and must use region kind \"full\"".into(),
            ));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let mag = (layer.disparity[0].powi(2) + layer.disparity[1].powi(2)).sqrt();
            if mag > self.max_disparity {
                return Err(FusionError::InvalidScene(format!(
                    "layer {i} disparity magnitude {mag:.2} exceeds max {}",
                    self.max_disparity
                )));
            }
            if layer.blur_sigma < 0.0 {
                return Err(FusionError::InvalidScene(format!(
                    "layer {i} blur_sigma must be >= 0"
                )));
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(FusionError::InvalidScene("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<SceneSpec> {
        let spec: SceneSpec = serde_json::from_str(json)
            .map_err(|e| FusionError::InvalidScene(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Renders the procedural ground-truth texture and realizes the scene.
    pub fn realize(&self) -> Result<RigScene> {
        self.validate()?;
        let gt_image = procedural_texture(self.width, self.height, self.seed)?;
        let focus_roi = match self.focus_roi {
            Some([x, y, w, h]) => Rect::new(x, y, w, h),
            None => Rect::new(
                self.width as f64 * 0.25,
                self.height as f64 * 0.25,
                self.width as f64 * 0.5,
                self.height as f64 * 0.5,
            ),
        };
        Ok(RigScene {
            gt_image,
            layers: self.layers.clone(),
            noise_sigma: self.noise_sigma,
            color_gain: self.color_gain,
            translation: Translation2D::new(self.translation[0], self.translation[1]),
            focal_ratio: self.focal_ratio,
            seed: self.seed,
            margin: self.margin,
            focus_roi,
        })
    }
}

/// Multi-octave smoothed noise with a shared luminance base, normalized into
/// [0.15, 0.85] so fusion stays comfortably in gamut.
fn procedural_texture(w: usize, h: usize, seed: u64) -> Result<PlanarImage> {
    let octaves: [(f64, f64); 3] = [(1.0, 0.5), (4.0, 0.3), (12.0, 0.2)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let noise_plane = |rng: &mut ChaCha8Rng| -> Result<Vec<f32>> {
        let mut acc = vec![0.0f32; w * h];
        for (sigma, weight) in octaves {
            let mut img = PlanarImage::new(w, h, 1);
            for v in img.plane_mut(0) {
                *v = rng.gen_range(0.0..1.0);
            }
            let smooth = gaussian_blur(&img, sigma)?;
            for (a, s) in acc.iter_mut().zip(smooth.plane(0)) {
                *a += (weight as f32) * s;
            }
        }
        Ok(acc)
    };

    let base = noise_plane(&mut rng)?;
    let mut out = PlanarImage::new(w, h, 3);
    for c in 0..3 {
        let indep = noise_plane(&mut rng)?;
        let plane = out.plane_mut(c);
        for i in 0..w * h {
            plane[i] = 0.7 * base[i] + 0.3 * indep[i];
        }
        // Affine-normalize the plane into [0.15, 0.85].
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for v in plane.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let span = (hi - lo).max(1e-6);
        for v in plane.iter_mut() {
            *v = 0.15 + 0.7 * (*v - lo) / span;
        }
    }
    Ok(out)
}

/// Index of the layer owning each tele pixel in the source frame: the last
/// listed layer whose region contains it (painter's order).
fn owner_layer(layers: &[LayerSpec], x: usize, y: usize) -> usize {
    let cx = x as f64 + 0.5;
    let cy = y as f64 + 0.5;
    let mut owner = 0;
    for (i, layer) in layers.iter().enumerate().skip(1) {
        if layer.region.contains(cx, cy) {
            owner = i;
        }
    }
    owner
}

/// Renders the pair, the calibration metadata, and the ground-truth labels.
pub fn synthesize_pair(scene: &RigScene) -> Result<(PlanarImage, PlanarImage, CameraMeta, PairLabels)> {
    let (tw, th) = scene.gt_image.dims();
    let fr = scene.focal_ratio;
    let t = scene.translation;

    // Per-layer content: the ground truth under each layer's defocus blur.
    let mut contents: Vec<PlanarImage> = Vec::with_capacity(scene.layers.len());
    for layer in &scene.layers {
        contents.push(if layer.blur_sigma > 0.0 {
            gaussian_blur(&scene.gt_image, layer.blur_sigma)?
        } else {
            scene.gt_image.clone()
        });
    }

    // Tele view: paint back to front. Content for layer l lands at
    // x = x_src + t + d_l, so we sample content at x - t - d_l.
    let mut tele = PlanarImage::new(tw, th, 3);
    for c in 0..3 {
        let planes: Vec<&[f32]> = contents.iter().map(|img| img.plane(c)).collect();
        let layers = &scene.layers;
        let out = tele.plane_mut(c);
        use rayon::prelude::*;
        out.par_chunks_mut(tw).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let mut value = 0.0f32;
                for (l, layer) in layers.iter().enumerate() {
                    let sx = x as f64 - t.dx - layer.disparity[0];
                    let sy = y as f64 - t.dy - layer.disparity[1];
                    let covered = if l == 0 {
                        true // background fills disocclusions via edge clamp
                    } else {
                        layer.region.contains(sx + 0.5, sy + 0.5)
                    };
                    if covered {
                        value = sample_bilinear(planes[l], tw, th, sx as f32, sy as f32);
                    }
                }
                *o = value;
            }
        });
    }

    // Photometric gain, then seeded sensor noise (sequential, so the output
    // is independent of thread count).
    for c in 0..3 {
        let gain = scene.color_gain[c] as f32;
        for v in tele.plane_mut(c) {
            *v = (*v * gain).clamp(0.0, 1.0);
        }
    }
    if scene.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x6e6f_6973_65u64);
        let normal = Normal::new(0.0f64, scene.noise_sigma)
            .map_err(|e| FusionError::InvalidScene(e.to_string()))?;
        for c in 0..3 {
            for v in tele.plane_mut(c) {
                *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
    }

    // Wide view: the scene behind the simulated optical gap, downscaled by
    // the focal ratio into the tele-FOV rect of a larger frame. The wide
    // frame is the source reference: the whole translation shows up on the
    // tele side, where coarse alignment removes it.
    let w_deep = gaussian_blur(&scene.gt_image, fr / 2.0)?;
    let rw = ((tw as f64 / fr).round() as usize).max(1);
    let rh = ((th as f64 / fr).round() as usize).max(1);
    let m = scene.margin;
    let full_w_dims = (rw + 2 * m, rh + 2 * m);
    let wide = resample_region(
        &w_deep,
        (-(m as f64) * fr, -(m as f64) * fr),
        (full_w_dims.0 as f64 * fr, full_w_dims.1 as f64 * fr),
        full_w_dims.0,
        full_w_dims.1,
        Kernel::Bicubic,
    )?;

    let meta = CameraMeta {
        focal_ratio: fr,
        tele_fov_rect: Rect::new(m as f64, m as f64, rw as f64, rh as f64),
        focus_roi: scene.focus_roi,
    };

    // Labels in the source frame.
    let mut fu = vec![0.0f32; tw * th];
    let mut fv = vec![0.0f32; tw * th];
    let mut gt_occlusion = Mask::new(tw, th);
    let mut gt_defocus = Mask::new(tw, th);
    {
        let layers = &scene.layers;
        for y in 0..th {
            for x in 0..tw {
                let i = y * tw + x;
                let l = owner_layer(layers, x, y);
                fu[i] = layers[l].disparity[0] as f32;
                fv[i] = layers[l].disparity[1] as f32;
                if layers[l].blur_sigma > 0.0 {
                    gt_defocus.set(x, y, 1.0);
                }
                // Occluded when a layer painted later covers this pixel's
                // landing spot in the tele view.
                let land_x = x as f64 + t.dx + layers[l].disparity[0];
                let land_y = y as f64 + t.dy + layers[l].disparity[1];
                for other in layers.iter().skip(l + 1) {
                    let sx = land_x - t.dx - other.disparity[0] + 0.5;
                    let sy = land_y - t.dy - other.disparity[1] + 0.5;
                    if other.region.contains(sx, sy) {
                        gt_occlusion.set(x, y, 1.0);
                        break;
                    }
                }
            }
        }
    }
    let n = tw * th;
    let gt_flow = crate::flow::FlowField::from_planes(tw, th, fu, fv, vec![0.0; n], vec![0.0; n])?;

    Ok((
        wide,
        tele,
        meta,
        PairLabels {
            gt_flow,
            gt_occlusion,
            gt_defocus_region: gt_defocus,
        },
    ))
}

/// Convenience wrapper: realize a JSON scene spec and synthesize its pair.
pub fn synthesize_from_json(json: &str) -> Result<(PlanarImage, PlanarImage, CameraMeta, PairLabels)> {
    let scene = SceneSpec::from_json(json)?.realize()?;
    synthesize_pair(&scene)
}
