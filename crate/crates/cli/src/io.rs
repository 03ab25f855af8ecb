//! File I/O: PNG images in and out, metadata sidecars, and debug dumps.
//!
//! 8-bit and 16-bit PNGs are accepted; outputs are written as 16-bit PNG.
//! All writes go through a temp file and an atomic rename, so a failing run
//! never leaves a partial output behind.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use zoomfuse::flow::{write_flo, write_logvar_sidecar, FlowField};
use zoomfuse::{CameraMeta, FusionError, Mask, PlanarImage, Result};

/// Loads a PNG as a 3-channel planar float image in `[0, 1]`. Gray inputs
/// are replicated across channels; alpha is dropped.
pub fn load_rgb(path: &Path) -> Result<PlanarImage> {
    let img = image::open(path).map_err(|e| {
        FusionError::Io(std::io::Error::other(format!(
            "{}: {e}",
            path.display()
        )))
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = PlanarImage::new(w, h, 3);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                let v = p.0[0] as f32 / 255.0;
                for c in 0..3 {
                    out.plane_mut(c)[i] = v;
                }
            }
        }
        DynamicImage::ImageLuma16(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                let v = p.0[0] as f32 / 65535.0;
                for c in 0..3 {
                    out.plane_mut(c)[i] = v;
                }
            }
        }
        DynamicImage::ImageRgb8(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                for c in 0..3 {
                    out.plane_mut(c)[i] = p.0[c] as f32 / 255.0;
                }
            }
        }
        DynamicImage::ImageRgb16(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                for c in 0..3 {
                    out.plane_mut(c)[i] = p.0[c] as f32 / 65535.0;
                }
            }
        }
        DynamicImage::ImageRgba8(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                for c in 0..3 {
                    out.plane_mut(c)[i] = p.0[c] as f32 / 255.0;
                }
            }
        }
        DynamicImage::ImageRgba16(buf) => {
            for (i, p) in buf.pixels().enumerate() {
                for c in 0..3 {
                    out.plane_mut(c)[i] = p.0[c] as f32 / 65535.0;
                }
            }
        }
        other => {
            return Err(FusionError::InvalidInput(format!(
                "{}: unsupported pixel format {other:?}",
                path.display()
            )))
        }
    }
    Ok(out)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes a 3-channel image as 16-bit PNG.
pub fn save_rgb16(path: &Path, img: &PlanarImage) -> Result<()> {
    if img.channels() != 3 {
        return Err(FusionError::InvalidInput("save_rgb16 needs a 3-channel image".into()));
    }
    let (w, h) = img.dims();
    let mut buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = Rgb([
                (img.get(x, y, 0).clamp(0.0, 1.0) * 65535.0).round() as u16,
                (img.get(x, y, 1).clamp(0.0, 1.0) * 65535.0).round() as u16,
                (img.get(x, y, 2).clamp(0.0, 1.0) * 65535.0).round() as u16,
            ]);
            buf.put_pixel(x as u32, y as u32, px);
        }
    }
    let mut bytes = Vec::new();
    DynamicImage::ImageRgb16(buf)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| FusionError::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

/// Writes a mask as 8-bit grayscale PNG (`value = round(255 * m)`).
pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = mask.dims();
    let mut buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(
                x as u32,
                y as u32,
                Luma([(mask.get(x, y) * 255.0).round() as u8]),
            );
        }
    }
    let mut bytes = Vec::new();
    DynamicImage::ImageLuma8(buf)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| FusionError::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

pub fn load_meta(path: &Path) -> Result<CameraMeta> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        FusionError::InvalidInput(format!("{}: {e}", path.display()))
    })
}

pub fn save_meta(path: &Path, meta: &CameraMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| FusionError::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, json.as_bytes())
}

pub fn save_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let mut bytes = Vec::new();
    write_flo(&mut bytes, flow)?;
    write_atomic(path, &bytes)
}

pub fn save_logvar(path: &Path, flow: &FlowField) -> Result<()> {
    let mut bytes = Vec::new();
    write_logvar_sidecar(&mut bytes, flow)?;
    write_atomic(path, &bytes)
}

pub fn save_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| FusionError::Io(std::io::Error::other(e.to_string())))?;
    write_atomic(path, json.as_bytes())
}
