//! Normalisation applied to every backend's output.

use super::{object_key, BackendError, Existence, ToolBackend};
use crate::geometry::rescale_coords;
use crate::model::{BBox, CxrObject, CxrSegmentation, ImageSize, StudyRecord};

/// Maps a box from the frame a tool worked in to the study's original
/// frame. `declared` is the size the tool reported; without one, the study's
/// `model_image_sizes` entry for `tool_id` is used, and failing that the
/// coordinates are taken as already original.
pub fn to_original_frame(
    study: &StudyRecord,
    tool_id: &str,
    declared: Option<ImageSize>,
    bbox: BBox,
) -> Result<BBox, BackendError> {
    let frame = declared.or_else(|| study.model_image_sizes.get(tool_id).copied());
    match frame {
        Some(from) if from != study.original_size => rescale_coords(bbox, from, study.original_size)
            .map_err(|e| BackendError::ProtocolViolation(e.to_string())),
        _ => Ok(bbox),
    }
}

/// Wraps a backend so that its answers satisfy the API contract:
///
/// * boxes lie inside the original image and confidences inside `[0, 1]`;
/// * detections below `min_confidence` are dropped;
/// * masks have the original image's dimensions;
/// * `exists(x)` is true exactly when `find(x)` is non-empty.
pub struct Normalized<B> {
    inner: B,
    min_confidence: f64,
}

impl<B: ToolBackend> Normalized<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            min_confidence: 0.0,
        }
    }

    pub fn with_min_confidence(mut self, min_confidence: f64) -> Self {
        self.min_confidence = min_confidence;
        self
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn min_confidence(&self) -> f64 {
        self.min_confidence
    }
}

impl<B: ToolBackend> ToolBackend for Normalized<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn tool_for(&self, object_name: &str) -> String {
        self.inner.tool_for(object_name)
    }

    fn exists(&self, study: &StudyRecord, object_name: &str) -> Result<Existence, BackendError> {
        let found = self.find(study, object_name)?;
        if found.is_empty() {
            return Ok(Existence {
                exists: false,
                confidence: 0.0,
            });
        }
        Ok(Existence {
            exists: true,
            confidence: found.iter().map(|o| o.confidence).fold(0.0, f64::max),
        })
    }

    fn find(&self, study: &StudyRecord, object_name: &str) -> Result<Vec<CxrObject>, BackendError> {
        let raw = self.inner.find(study, object_name)?;
        let mut out = Vec::with_capacity(raw.len());
        for obj in raw {
            if !(0.0..=1.0).contains(&obj.confidence) || obj.confidence.is_nan() {
                return Err(BackendError::ProtocolViolation(format!(
                    "confidence {} for '{object_name}' outside [0, 1]",
                    obj.confidence
                )));
            }
            let b = obj.bbox;
            let coords = b.as_array();
            if coords.iter().any(|c| !c.is_finite()) || b.left > b.right || b.lower > b.upper {
                return Err(BackendError::ProtocolViolation(format!(
                    "malformed box {coords:?} for '{object_name}'"
                )));
            }
            if !b.fits_within(study.original_size) {
                return Err(BackendError::ProtocolViolation(format!(
                    "box {coords:?} for '{object_name}' lies outside {}",
                    study.original_size
                )));
            }
            if obj.confidence < self.min_confidence {
                continue;
            }
            out.push(CxrObject {
                object_name: object_key(object_name),
                ..obj
            });
        }
        Ok(out)
    }

    fn segment(&self, study: &StudyRecord, object_name: &str) -> Result<CxrSegmentation, BackendError> {
        let seg = self.inner.segment(study, object_name)?;
        if seg.mask.size != study.original_size {
            return Err(BackendError::ProtocolViolation(format!(
                "mask for '{object_name}' is {}, image is {}",
                seg.mask.size, study.original_size
            )));
        }
        Ok(CxrSegmentation::new(object_key(object_name), seg.mask))
    }
}
