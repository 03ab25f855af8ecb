//! Rectangles, translations, and camera metadata.

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};

/// Axis-aligned rectangle in pixel coordinates. Origin may be fractional
/// (the coarse-alignment adjustment shifts the tele footprint sub-pixel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.width <= 0.0 || self.height <= 0.0
    }

    /// True when `self` lies fully inside a `w x h` image.
    pub fn inside(&self, w: usize, h: usize) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.width <= w as f64
            && self.y + self.height <= h as f64
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.width, self.height)
    }

    /// Scales both origin and extent (maps between resolutions).
    pub fn scaled(&self, sx: f64, sy: f64) -> Rect {
        Rect::new(self.x * sx, self.y * sy, self.width * sx, self.height * sy)
    }
}

/// Sub-pixel global 2-D translation: content at `p` in the source appears at
/// `p + t` in the reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Translation2D {
    pub dx: f64,
    pub dy: f64,
}

impl Translation2D {
    pub fn new(dx: f64, dy: f64) -> Self {
        Translation2D { dx, dy }
    }

    pub fn magnitude(&self) -> f64 {
        (self.dx * self.dx + self.dy * self.dy).sqrt()
    }
}

/// Calibration metadata for a wide/tele pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraMeta {
    /// Tele focal length over wide focal length; must be > 1.
    pub focal_ratio: f64,
    /// Tele field of view inside the wide frame, in wide pixel coordinates.
    pub tele_fov_rect: Rect,
    /// Autofocus region of interest, in tele pixel coordinates.
    pub focus_roi: Rect,
}

impl CameraMeta {
    /// Checks the invariants against the actual image dimensions.
    pub fn validate(&self, wide_dims: (usize, usize), tele_dims: (usize, usize)) -> Result<()> {
        if !(self.focal_ratio > 1.0) {
            return Err(FusionError::InvalidInput(format!(
                "focal_ratio must be > 1, got {}",
                self.focal_ratio
            )));
        }
        if self.tele_fov_rect.is_empty() || !self.tele_fov_rect.inside(wide_dims.0, wide_dims.1) {
            return Err(FusionError::InvalidInput(format!(
                "tele_fov_rect {:?} outside wide bounds {}x{}",
                self.tele_fov_rect, wide_dims.0, wide_dims.1
            )));
        }
        // An empty focus ROI is allowed (degrades to an all-zero defocus
        // mask), but a non-empty one must sit inside the tele frame.
        if !self.focus_roi.is_empty() && !self.focus_roi.inside(tele_dims.0, tele_dims.1) {
            return Err(FusionError::InvalidInput(format!(
                "focus_roi {:?} outside tele bounds {}x{}",
                self.focus_roi, tele_dims.0, tele_dims.1
            )));
        }
        Ok(())
    }
}
