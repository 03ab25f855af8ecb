//! Planar float image containers.
//!
//! All pixel data is stored as `f32` in `[0, 1]`, one contiguous row-major
//! plane per channel. Signed intermediates (detail bands, flow residuals)
//! may leave `[0, 1]` and are documented as such where they occur.

use crate::error::{FusionError, Result};

/// Multi-channel float image with planar storage.
///
/// Plane `c` occupies `data[c * width * height .. (c + 1) * width * height]`,
/// rows contiguous within a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl PlanarImage {
    /// Zero-filled image. `channels` must be 1, 2, or 3.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(
            (1..=3).contains(&channels),
            "channel count must be 1, 2, or 3"
        );
        assert!(width > 0 && height > 0, "dimensions must be positive");
        PlanarImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    /// Wraps existing planar data. Length must equal `width * height * channels`.
    pub fn from_planes(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(FusionError::InvalidInput(format!(
                "plane data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(PlanarImage {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image holding `value` everywhere.
    pub fn constant(width: usize, height: usize, channels: usize, value: f32) -> Self {
        let mut img = Self::new(width, height, channels);
        img.data.fill(value);
        img
    }

    /// Builds a single-channel image by evaluating `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut img = Self::new(width, height, 1);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Borrow of plane `c`.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// All planes, concatenated.
    pub fn samples(&self) -> &[f32] {
        &self.data
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[c * self.width * self.height + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[c * self.width * self.height + y * self.width + x] = v;
    }

    /// Extracts one channel as a new single-channel image.
    pub fn channel(&self, c: usize) -> PlanarImage {
        PlanarImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    /// Stacks single-channel images into one multi-channel image.
    pub fn stack(planes: &[&PlanarImage]) -> Result<PlanarImage> {
        assert!(!planes.is_empty() && planes.len() <= 3);
        let (w, h) = planes[0].dims();
        let mut data = Vec::with_capacity(w * h * planes.len());
        for p in planes {
            if p.dims() != (w, h) || p.channels != 1 {
                return Err(FusionError::dims((w, h), p.dims(), "stack"));
            }
            data.extend_from_slice(&p.data);
        }
        PlanarImage::from_planes(w, h, planes.len(), data)
    }

    /// True when every sample is finite and inside `[lo, hi]`.
    pub fn all_in_range(&self, lo: f32, hi: f32) -> bool {
        self.data.iter().all(|v| v.is_finite() && *v >= lo && *v <= hi)
    }

    /// Clamps every sample to `[0, 1]` in place.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Single-channel float mask; every value stays in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "dimensions must be positive");
        Mask {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        debug_assert!((0.0..=1.0).contains(&value));
        let mut m = Self::new(width, height);
        m.data.fill(value);
        m
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(FusionError::InvalidInput(format!(
                "mask data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)), "mask values outside [0,1]");
        Ok(Mask {
            width,
            height,
            data,
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        debug_assert!((0.0..=1.0).contains(&v), "mask value outside [0,1]");
        self.data[y * self.width + x] = v;
    }

    /// View of the mask as a single-channel image, for resampling.
    pub fn as_image(&self) -> PlanarImage {
        PlanarImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }

    /// Converts a single-channel image into a mask, clamping to `[0, 1]`.
    pub fn from_image(img: &PlanarImage) -> Mask {
        assert_eq!(img.channels(), 1, "mask source must be single-channel");
        Mask {
            width: img.width(),
            height: img.height(),
            data: img.plane(0).iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}
