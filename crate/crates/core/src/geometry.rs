//! Pixel to physical unit conversion and frame rescaling.

use thiserror::Error;

use crate::model::{BBox, ImageSize, PixelSpacing};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

/// Euclidean length of a pixel displacement, in centimetres.
///
/// Each axis is scaled by its own spacing before combining, so anisotropic
/// pixels are handled correctly.
pub fn px_distance_to_cm(dx_px: f64, dy_px: f64, spacing: PixelSpacing) -> Result<f64, GeometryError> {
    if !dx_px.is_finite() || !dy_px.is_finite() {
        return Err(GeometryError::InvalidGeometry(format!(
            "non-finite displacement ({dx_px}, {dy_px})"
        )));
    }
    if !(spacing.x_mm > 0.0 && spacing.y_mm > 0.0) {
        return Err(GeometryError::InvalidGeometry(format!(
            "non-positive pixel spacing ({}, {})",
            spacing.x_mm, spacing.y_mm
        )));
    }
    let dx_mm = dx_px * spacing.x_mm;
    let dy_mm = dy_px * spacing.y_mm;
    Ok(dx_mm.hypot(dy_mm) / 10.0)
}

/// Horizontal pixel length in centimetres.
pub fn px_width_to_cm(width_px: f64, spacing: PixelSpacing) -> Result<f64, GeometryError> {
    px_distance_to_cm(width_px, 0.0, spacing)
}

/// Vertical pixel length in centimetres.
pub fn px_height_to_cm(height_px: f64, spacing: PixelSpacing) -> Result<f64, GeometryError> {
    px_distance_to_cm(0.0, height_px, spacing)
}

/// Distance in cm between two pixel positions.
pub fn center_distance_cm(
    a: (f64, f64),
    b: (f64, f64),
    spacing: PixelSpacing,
) -> Result<f64, GeometryError> {
    px_distance_to_cm(b.0 - a.0, b.1 - a.1, spacing)
}

/// Maps a box from one image frame into another by independent axis scaling.
pub fn rescale_coords(bbox: BBox, from: ImageSize, to: ImageSize) -> Result<BBox, GeometryError> {
    if from.width == 0 || from.height == 0 || to.width == 0 || to.height == 0 {
        return Err(GeometryError::InvalidGeometry(format!(
            "zero image dimension in rescale {from} -> {to}"
        )));
    }
    if from == to {
        return Ok(bbox);
    }
    let sx = to.width as f64 / from.width as f64;
    let sy = to.height as f64 / from.height as f64;
    let scaled = BBox::new(
        bbox.left * sx,
        bbox.lower * sy,
        bbox.right * sx,
        bbox.upper * sy,
    )
    .map_err(|e| GeometryError::InvalidGeometry(e.to_string()))?;
    // Multiplying equal coordinates by the same factor keeps them equal, so
    // point-ness survives.
    Ok(scaled)
}

/// Rounds to one decimal place, the precision used when rendering values.
pub fn round_to_tenth(value: f64) -> f64 {
    (value * 10.0).round() / 10.0
}

/// Renders a centimetre value the way it appears in reports.
pub fn format_cm(value: f64) -> String {
    format!("{:.1}", round_to_tenth(value))
}
