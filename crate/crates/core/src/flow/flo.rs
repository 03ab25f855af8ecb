//! Middlebury `.flo` serialization, plus a two-plane log-variance sidecar
//! using the same header convention.
//!
//! Layout (little-endian): magic float `202021.25`, `i32` width, `i32`
//! height, then `height * width` interleaved float pairs — `(u, v)` for
//! flow files, `(logvar_x, logvar_y)` for the sidecar.

use std::io::{Read, Write};

use crate::error::{FusionError, Result};

use super::FlowField;

const FLO_MAGIC: f32 = 202021.25;

fn write_pairs<W: Write>(out: &mut W, width: usize, height: usize, a: &[f32], b: &[f32]) -> Result<()> {
    out.write_all(&FLO_MAGIC.to_le_bytes())?;
    out.write_all(&(width as i32).to_le_bytes())?;
    out.write_all(&(height as i32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(width * height * 8);
    for i in 0..width * height {
        buf.extend_from_slice(&a[i].to_le_bytes());
        buf.extend_from_slice(&b[i].to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_pairs<R: Read>(input: &mut R, context: &str) -> Result<(usize, usize, Vec<f32>, Vec<f32>)> {
    let mut head = [0u8; 12];
    input.read_exact(&mut head)?;
    let magic = f32::from_le_bytes(head[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(FusionError::InvalidInput(format!(
            "{context}: bad magic {magic}, expected {FLO_MAGIC}"
        )));
    }
    let width = i32::from_le_bytes(head[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(head[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(FusionError::InvalidInput(format!(
            "{context}: non-positive dimensions {width}x{height}"
        )));
    }
    let (w, h) = (width as usize, height as usize);
    let mut bytes = vec![0u8; w * h * 8];
    input.read_exact(&mut bytes)?;
    let mut a = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    for chunk in bytes.chunks_exact(8) {
        a.push(f32::from_le_bytes(chunk[0..4].try_into().unwrap()));
        b.push(f32::from_le_bytes(chunk[4..8].try_into().unwrap()));
    }
    Ok((w, h, a, b))
}

/// Writes displacement as a Middlebury `.flo` stream.
pub fn write_flo<W: Write>(out: &mut W, flow: &FlowField) -> Result<()> {
    write_pairs(out, flow.width(), flow.height(), flow.u(), flow.v())
}

/// Reads a `.flo` stream. Log-variance planes are zero-filled (the format
/// carries displacement only); attach a sidecar with
/// [`read_logvar_sidecar`] when uncertainty is needed.
pub fn read_flo<R: Read>(input: &mut R) -> Result<FlowField> {
    let (w, h, u, v) = read_pairs(input, "flo")?;
    FlowField::from_planes(w, h, u, v, vec![0.0; w * h], vec![0.0; w * h])
}

/// Writes the log-variance planes as a `.flo`-style sidecar.
pub fn write_logvar_sidecar<W: Write>(out: &mut W, flow: &FlowField) -> Result<()> {
    write_pairs(out, flow.width(), flow.height(), flow.logvar_x(), flow.logvar_y())
}

/// Reads a log-variance sidecar into an existing flow field, checking that
/// the dimensions agree.
pub fn read_logvar_sidecar<R: Read>(input: &mut R, flow: &mut FlowField) -> Result<()> {
    let (w, h, lx, ly) = read_pairs(input, "logvar sidecar")?;
    if (w, h) != flow.dims() {
        return Err(FusionError::dims(flow.dims(), (w, h), "logvar sidecar"));
    }
    flow.logvar_x_mut().copy_from_slice(&lx);
    flow.logvar_y_mut().copy_from_slice(&ly);
    Ok(())
}
