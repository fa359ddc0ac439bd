//! Annotation fixtures: a line-delimited store of boxes, points and masks.
//!
//! ```text
//! study_id<TAB>object_name<TAB>l,lo,r,u<TAB>confidence
//! study_id<TAB>object_name<TAB>MASK<TAB>w,h<TAB>c0,c1,c2,...
//! ```
//!
//! Mask counts are row-major run lengths beginning with a background run,
//! which may be zero. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{object_key, BackendError, Existence, ToolBackend};
use crate::mask::Rle;
use crate::model::{BBox, CxrObject, CxrSegmentation, ImageSize, StudyRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{source_name}:{line}: {message}")]
pub struct IngestError {
    pub source_name: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    pub bbox: BBox,
    pub confidence: f64,
}

/// Every annotation recorded for one study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureAnnotation {
    pub study_id: String,
    pub objects: BTreeMap<String, Vec<AnnotatedBox>>,
    pub masks: BTreeMap<String, Rle>,
}

impl FixtureAnnotation {
    pub fn new(study_id: impl Into<String>) -> Self {
        Self {
            study_id: study_id.into(),
            ..Default::default()
        }
    }

    pub fn add_box(&mut self, object_name: &str, bbox: BBox, confidence: f64) -> &mut Self {
        self.objects
            .entry(object_key(object_name))
            .or_default()
            .push(AnnotatedBox { bbox, confidence });
        self
    }

    pub fn add_mask(&mut self, object_name: &str, mask: Rle) -> &mut Self {
        self.masks.insert(object_key(object_name), mask);
        self
    }

    pub fn boxes(&self, object_name: &str) -> &[AnnotatedBox] {
        self.objects
            .get(&object_key(object_name))
            .map_or(&[], Vec::as_slice)
    }

    pub fn mask(&self, object_name: &str) -> Option<&Rle> {
        self.masks.get(&object_key(object_name))
    }

    /// Checks coordinates and mask sizes against the study's image.
    pub fn validate_against(&self, study: &StudyRecord) -> Result<(), String> {
        for (name, boxes) in &self.objects {
            for b in boxes {
                if !b.bbox.fits_within(study.original_size) {
                    return Err(format!(
                        "{}: box {:?} for '{name}' lies outside {}",
                        self.study_id,
                        b.bbox.as_array(),
                        study.original_size
                    ));
                }
            }
        }
        for (name, mask) in &self.masks {
            if mask.size != study.original_size {
                return Err(format!(
                    "{}: mask for '{name}' is {}, image is {}",
                    self.study_id, mask.size, study.original_size
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureStore {
    pub studies: BTreeMap<String, FixtureAnnotation>,
}

fn parse_list<T: std::str::FromStr>(field: &str, expected: Option<usize>) -> Result<Vec<T>, String> {
    let values = field
        .split([',', ' ', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("not a number: '{s}'")))
        .collect::<Result<Vec<T>, String>>()?;
    if let Some(n) = expected {
        if values.len() != n {
            return Err(format!("expected {n} comma-separated values, found {}", values.len()));
        }
    }
    Ok(values)
}

impl FixtureStore {
    pub fn parse(text: &str, source_name: &str) -> Result<Self, IngestError> {
        let mut store = FixtureStore::default();
        for (no, line) in text.lines().enumerate() {
            let err = |message: String| IngestError {
                source_name: source_name.to_string(),
                line: no + 1,
                message,
            };
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
            if fields.len() < 4 {
                return Err(err(format!("expected at least 4 tab-separated fields, found {}", fields.len())));
            }
            let (study_id, object_name) = (fields[0].trim(), fields[1].trim());
            if study_id.is_empty() || object_name.is_empty() {
                return Err(err("study_id and object_name must be non-empty".into()));
            }
            let entry = store
                .studies
                .entry(study_id.to_string())
                .or_insert_with(|| FixtureAnnotation::new(study_id));
            if fields[2].trim() == "MASK" {
                if fields.len() < 5 {
                    return Err(err("mask lines need w,h and counts".into()));
                }
                let dims: Vec<u32> = parse_list(fields[3], Some(2)).map_err(err)?;
                let size = ImageSize::new(dims[0], dims[1]).map_err(|e| err(e.to_string()))?;
                let counts: Vec<u32> = parse_list(&fields[4..].join(","), None).map_err(err)?;
                let mask = Rle::from_counts(size, &counts).map_err(|e| err(e.to_string()))?;
                if entry.masks.contains_key(&object_key(object_name)) {
                    return Err(err(format!("duplicate mask for '{object_name}'")));
                }
                entry.add_mask(object_name, mask);
            } else {
                if fields.len() != 4 {
                    return Err(err(format!("box lines have 4 fields, found {}", fields.len())));
                }
                let c: Vec<f64> = parse_list(fields[2], Some(4)).map_err(err)?;
                let bbox = BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| err(e.to_string()))?;
                if c.iter().any(|&v| v < 0.0) {
                    return Err(err("coordinates must be non-negative".into()));
                }
                let confidence: f64 = fields[3]
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("not a number: '{}'", fields[3])))?;
                if !(0.0..=1.0).contains(&confidence) {
                    return Err(err(format!("confidence {confidence} outside [0, 1]")));
                }
                entry.add_box(object_name, bbox, confidence);
            }
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError {
            source_name: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn get(&self, study_id: &str) -> Option<&FixtureAnnotation> {
        self.studies.get(study_id)
    }

    pub fn insert(&mut self, annotation: FixtureAnnotation) {
        self.studies.insert(annotation.study_id.clone(), annotation);
    }

    /// Serialises back into the line format; `parse(render(s)) == s`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (study_id, ann) in &self.studies {
            for (name, boxes) in &ann.objects {
                for b in boxes {
                    let [l, lo, r, u] = b.bbox.as_array();
                    let _ = writeln!(out, "{study_id}\t{name}\t{l},{lo},{r},{u}\t{}", b.confidence);
                }
            }
            for (name, mask) in &ann.masks {
                let counts: Vec<String> = mask.to_counts().iter().map(u32::to_string).collect();
                let _ = writeln!(
                    out,
                    "{study_id}\t{name}\tMASK\t{},{}\t{}",
                    mask.size.width,
                    mask.size.height,
                    counts.join(",")
                );
            }
        }
        out
    }
}

/// Answers every API call from a fixture store.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    id: String,
    store: Arc<FixtureStore>,
}

impl FixtureBackend {
    pub fn new(id: impl Into<String>, store: FixtureStore) -> Self {
        Self {
            id: id.into(),
            store: Arc::new(store),
        }
    }

    pub fn load(id: impl Into<String>, path: &Path) -> Result<Self, IngestError> {
        Ok(Self::new(id, FixtureStore::load(path)?))
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }
}

impl ToolBackend for FixtureBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn exists(&self, study: &StudyRecord, object_name: &str) -> Result<Existence, BackendError> {
        let found = self.find(study, object_name)?;
        let confidence = found.iter().map(|o| o.confidence).fold(0.0, f64::max);
        let has_mask = self
            .store
            .get(&study.study_id)
            .and_then(|a| a.mask(object_name))
            .is_some_and(|m| m.area() > 0);
        Ok(Existence {
            exists: !found.is_empty() || has_mask,
            confidence: if found.is_empty() && has_mask { 1.0 } else { confidence },
        })
    }

    fn find(&self, study: &StudyRecord, object_name: &str) -> Result<Vec<CxrObject>, BackendError> {
        let Some(ann) = self.store.get(&study.study_id) else {
            return Ok(Vec::new());
        };
        ann.boxes(object_name)
            .iter()
            .map(|b| {
                CxrObject::new(object_key(object_name), b.bbox, b.confidence)
                    .map_err(|e| BackendError::ProtocolViolation(e.to_string()))
            })
            .collect()
    }

    fn segment(&self, study: &StudyRecord, object_name: &str) -> Result<CxrSegmentation, BackendError> {
        let mask = self
            .store
            .get(&study.study_id)
            .and_then(|a| a.mask(object_name))
            .cloned()
            .unwrap_or_else(|| Rle::empty(study.original_size));
        Ok(CxrSegmentation::new(object_key(object_name), mask))
    }
}
