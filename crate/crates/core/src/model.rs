//! Domain types shared across the pipeline.
//!
//! All coordinates live in the original-image pixel frame. Backends that work
//! in another frame are rescaled at the adapter boundary before any value
//! reaches the executor.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::Rle;

/// Raised when a domain value violates its invariants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid image size {0}x{1}: both dimensions must be >= 1")]
    ImageSize(u32, u32),
    #[error("invalid pixel spacing ({0}, {1}): both components must be finite and > 0")]
    PixelSpacing(f64, f64),
    #[error("ground-truth report for study {0} is empty")]
    EmptyGroundTruth(String),
    #[error("invalid bounding box {0:?}")]
    BBox([f64; 4]),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

/// Width and height of an image in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::ImageSize(width, height));
        }
        Ok(Self { width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl TryFrom<[u32; 2]> for ImageSize {
    type Error = ModelError;

    fn try_from(value: [u32; 2]) -> Result<Self, Self::Error> {
        Self::new(value[0], value[1])
    }
}

impl From<ImageSize> for [u32; 2] {
    fn from(value: ImageSize) -> Self {
        [value.width, value.height]
    }
}

impl fmt::Display for ImageSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Physical size of one pixel, in millimetres, along x and y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct PixelSpacing {
    pub x_mm: f64,
    pub y_mm: f64,
}

impl PixelSpacing {
    pub fn new(x_mm: f64, y_mm: f64) -> Result<Self, ModelError> {
        let valid = |v: f64| v.is_finite() && v > 0.0;
        if !valid(x_mm) || !valid(y_mm) {
            return Err(ModelError::PixelSpacing(x_mm, y_mm));
        }
        Ok(Self { x_mm, y_mm })
    }
}

impl TryFrom<[f64; 2]> for PixelSpacing {
    type Error = ModelError;

    fn try_from(value: [f64; 2]) -> Result<Self, Self::Error> {
        Self::new(value[0], value[1])
    }
}

impl From<PixelSpacing> for [f64; 2] {
    fn from(value: PixelSpacing) -> Self {
        [value.x_mm, value.y_mm]
    }
}

/// One image with its metadata and every report written about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub image_ref: String,
    pub original_size: ImageSize,
    pub pixel_spacing: PixelSpacing,
    pub ground_truth_report: String,
    /// Report text keyed by report-generation model name.
    #[serde(default)]
    pub model_reports: BTreeMap<String, String>,
    /// Working frame of individual tools, keyed by backend id. Coordinates a
    /// tool emits without declaring a frame are assumed to be in this size.
    #[serde(default)]
    pub model_image_sizes: BTreeMap<String, ImageSize>,
}

impl StudyRecord {
    pub fn new(
        study_id: impl Into<String>,
        image_ref: impl Into<String>,
        original_size: ImageSize,
        pixel_spacing: PixelSpacing,
        ground_truth_report: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let record = Self {
            study_id: study_id.into(),
            image_ref: image_ref.into(),
            original_size,
            pixel_spacing,
            ground_truth_report: ground_truth_report.into(),
            model_reports: BTreeMap::new(),
            model_image_sizes: BTreeMap::new(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn with_model_report(mut self, model: impl Into<String>, text: impl Into<String>) -> Self {
        self.model_reports.insert(model.into(), text.into());
        self
    }

    /// Re-checks invariants; needed after deserialisation since the report
    /// text is not validated by serde.
    pub fn validate(&self) -> Result<(), ModelError> {
        ImageSize::new(self.original_size.width, self.original_size.height)?;
        PixelSpacing::new(self.pixel_spacing.x_mm, self.pixel_spacing.y_mm)?;
        if self.ground_truth_report.trim().is_empty() {
            return Err(ModelError::EmptyGroundTruth(self.study_id.clone()));
        }
        Ok(())
    }
}

/// Axis-aligned box `(left, lower, right, upper)` in pixel coordinates.
///
/// `lower`/`upper` are the numerically smaller/larger y values. A box with
/// zero extent on both axes is a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub left: f64,
    pub lower: f64,
    pub right: f64,
    pub upper: f64,
}

impl BBox {
    pub fn new(left: f64, lower: f64, right: f64, upper: f64) -> Result<Self, ModelError> {
        let coords = [left, lower, right, upper];
        if coords.iter().any(|c| !c.is_finite()) || left > right || lower > upper {
            return Err(ModelError::BBox(coords));
        }
        Ok(Self {
            left,
            lower,
            right,
            upper,
        })
    }

    pub fn point(x: f64, y: f64) -> Result<Self, ModelError> {
        Self::new(x, y, x, y)
    }

    pub fn is_point(&self) -> bool {
        self.left == self.right && self.lower == self.upper
    }

    pub fn center(&self) -> (f64, f64) {
        if self.is_point() {
            return (self.left, self.lower);
        }
        (
            (self.left + self.right) / 2.0,
            (self.lower + self.upper) / 2.0,
        )
    }

    pub fn width_px(&self) -> f64 {
        self.right - self.left
    }

    pub fn height_px(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn area_px(&self) -> f64 {
        self.width_px() * self.height_px()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.left, self.lower, self.right, self.upper]
    }

    /// True when every coordinate lies in `[0, size]` on its axis.
    pub fn fits_within(&self, size: ImageSize) -> bool {
        let w = size.width as f64;
        let h = size.height as f64;
        self.left >= 0.0 && self.right <= w && self.lower >= 0.0 && self.upper <= h
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = ModelError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.as_array()
    }
}

/// A detected object (or keypoint) in original-image pixel space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CxrObject {
    pub object_name: String,
    pub bbox: BBox,
    pub confidence: f64,
}

impl CxrObject {
    pub fn new(
        object_name: impl Into<String>,
        bbox: BBox,
        confidence: f64,
    ) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ModelError::Confidence(confidence));
        }
        Ok(Self {
            object_name: object_name.into(),
            bbox,
            confidence,
        })
    }

    pub fn is_point(&self) -> bool {
        self.bbox.is_point()
    }

    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

/// A binary region map with the same dimensions as the original image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CxrSegmentation {
    pub object_name: String,
    pub mask: Rle,
}

impl CxrSegmentation {
    pub fn new(object_name: impl Into<String>, mask: Rle) -> Self {
        Self {
            object_name: object_name.into(),
            mask,
        }
    }

    pub fn empty(object_name: impl Into<String>, size: ImageSize) -> Self {
        Self::new(object_name, Rle::empty(size))
    }

    pub fn is_empty(&self) -> bool {
        self.mask.area() == 0
    }
}

/// Position of an endotracheal tube relative to the guideline window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementVerdict {
    Correct,
    TooLow,
    TooHigh,
    IncorrectUnspecified,
}

impl PlacementVerdict {
    /// Binarisation used by the placement metrics.
    pub fn is_correct(self) -> bool {
        matches!(self, PlacementVerdict::Correct)
    }

    /// Wording used in rendered report clauses.
    pub fn phrase(self) -> &'static str {
        match self {
            PlacementVerdict::Correct => "correct",
            PlacementVerdict::TooLow => "too low",
            PlacementVerdict::TooHigh => "too high",
            PlacementVerdict::IncorrectUnspecified => "incorrect",
        }
    }
}

impl fmt::Display for PlacementVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.phrase())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_boxes() {
        let p = BBox::point(3.0, 4.0).unwrap();
        assert!(p.is_point());
        assert_eq!(p.center(), (3.0, 4.0));
        let b = BBox::new(0.0, 0.0, 4.0, 2.0).unwrap();
        assert!(!b.is_point());
        assert_eq!(b.center(), (2.0, 1.0));
    }

    #[test]
    fn rejects_inverted_box() {
        assert!(BBox::new(5.0, 0.0, 4.0, 1.0).is_err());
        assert!(BBox::new(0.0, 2.0, 4.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn study_invariants() {
        assert!(ImageSize::new(0, 10).is_err());
        assert!(PixelSpacing::new(0.0, 0.1).is_err());
        assert!(PixelSpacing::new(0.1, f64::INFINITY).is_err());
        let size = ImageSize::new(10, 10).unwrap();
        let spacing = PixelSpacing::new(0.1, 0.1).unwrap();
        assert!(StudyRecord::new("s", "img.png", size, spacing, "  ").is_err());
        assert!(StudyRecord::new("s", "img.png", size, spacing, "Normal.").is_ok());
    }

    #[test]
    fn confidence_range() {
        let b = BBox::point(1.0, 1.0).unwrap();
        assert!(CxrObject::new("carina", b, 1.5).is_err());
        assert!(CxrObject::new("carina", b, -0.1).is_err());
        assert!(CxrObject::new("carina", b, 1.0).is_ok());
    }

    #[test]
    fn verdict_binarisation_partitions() {
        let all = [
            PlacementVerdict::Correct,
            PlacementVerdict::TooLow,
            PlacementVerdict::TooHigh,
            PlacementVerdict::IncorrectUnspecified,
        ];
        let correct = all.iter().filter(|v| v.is_correct()).count();
        assert_eq!(correct, 1);
        assert_eq!(all.len() - correct, 3);
    }

    #[test]
    fn serde_shapes() {
        let size: ImageSize = serde_json::from_str("[2048, 1024]").unwrap();
        assert_eq!(size.width, 2048);
        assert!(serde_json::from_str::<ImageSize>("[0, 5]").is_err());
        let b: BBox = serde_json::from_str("[1, 2, 3, 4]").unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
    }
}
