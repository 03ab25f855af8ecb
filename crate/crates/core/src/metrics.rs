//! Image quality metrics used by the tests and the bench harness.

use crate::error::{FusionError, Result};
use crate::image::PlanarImage;
use crate::resample::gaussian_blur;

/// Peak signal-to-noise ratio in decibels for `[0, 1]` data, capped at 99 dB
/// (identical inputs would otherwise be infinite).
pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(FusionError::dims(a.dims(), b.dims(), "psnr"));
    }
    let mse: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.samples().len() as f64;
    if mse <= 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Mean absolute difference of Gaussian-blurred luma planes: measures
/// low-frequency brightness drift between two images.
pub fn brightness_consistency(y_a: &PlanarImage, y_b: &PlanarImage, sigma: f64) -> Result<f64> {
    if y_a.dims() != y_b.dims() {
        return Err(FusionError::dims(y_a.dims(), y_b.dims(), "brightness_consistency"));
    }
    if y_a.channels() != 1 || y_b.channels() != 1 {
        return Err(FusionError::InvalidInput(
            "brightness_consistency expects luma planes".into(),
        ));
    }
    let ga = gaussian_blur(y_a, sigma)?;
    let gb = gaussian_blur(y_b, sigma)?;
    Ok(ga
        .samples()
        .iter()
        .zip(gb.samples())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / ga.samples().len() as f64)
}
