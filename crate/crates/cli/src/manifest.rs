//! Line-delimited JSON manifests and report corpora.
//!
//! A manifest line describes one study:
//!
//! ```json
//! {"study_id": "s1", "image_ref": "s1.png", "original_size": [2048, 2048],
//!  "pixel_spacing_mm": [0.139, 0.139], "model_image_size": {"carinanet": [512, 512]},
//!  "reports": {"ground_truth": "...", "models": {"CheXagent": "..."}}}
//! ```
//!
//! A corpus line is the subset `{study_id, reports}`, so every manifest is
//! also a readable corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chexfix_core::model::{ImageSize, PixelSpacing, StudyRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}:{line}: duplicate study_id '{study_id}'")]
    Duplicate {
        source_name: String,
        line: usize,
        study_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Reports {
    pub ground_truth: String,
    /// Report text keyed by report-generation model.
    #[serde(default)]
    pub models: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub study_id: String,
    pub image_ref: String,
    pub original_size: ImageSize,
    pub pixel_spacing_mm: PixelSpacing,
    /// Working frame per tool backend id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub model_image_size: BTreeMap<String, ImageSize>,
    pub reports: Reports,
}

impl ManifestEntry {
    pub fn study(&self) -> StudyRecord {
        StudyRecord {
            study_id: self.study_id.clone(),
            image_ref: self.image_ref.clone(),
            original_size: self.original_size,
            pixel_spacing: self.pixel_spacing_mm,
            ground_truth_report: self.reports.ground_truth.clone(),
            model_reports: self.reports.models.clone(),
            model_image_sizes: self.model_image_size.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub study_id: String,
    pub reports: Reports,
}

impl From<&ManifestEntry> for CorpusLine {
    fn from(e: &ManifestEntry) -> Self {
        Self {
            study_id: e.study_id.clone(),
            reports: e.reports.clone(),
        }
    }
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses JSONL, skipping blank lines, and rejects repeated study ids.
fn parse_lines<T: DeserializeOwned>(
    text: &str,
    source_name: &str,
    id_of: impl Fn(&T) -> &str,
) -> Result<Vec<T>, IngestError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(line).map_err(|e| IngestError::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let id = id_of(&item).to_string();
        if !seen.insert(id.clone()) {
            return Err(IngestError::Duplicate {
                source_name: source_name.to_string(),
                line: i + 1,
                study_id: id,
            });
        }
        out.push(item);
    }
    Ok(out)
}

pub fn parse_manifest(text: &str, source_name: &str) -> Result<Vec<ManifestEntry>, IngestError> {
    let entries = parse_lines::<ManifestEntry>(text, source_name, |e| &e.study_id)?;
    for (i, e) in entries.iter().enumerate() {
        e.study().validate().map_err(|err| IngestError::Parse {
            source_name: source_name.to_string(),
            line: line_of(text, i),
            message: err.to_string(),
        })?;
    }
    Ok(entries)
}

/// One-based line number of the `nth` non-blank line.
fn line_of(text: &str, nth: usize) -> usize {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .nth(nth)
        .map_or(0, |(i, _)| i + 1)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, IngestError> {
    parse_manifest(&read_text(path)?, &path.display().to_string())
}

pub fn parse_corpus(text: &str, source_name: &str) -> Result<Vec<CorpusLine>, IngestError> {
    parse_lines::<CorpusLine>(text, source_name, |c| &c.study_id)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusLine>, IngestError> {
    parse_corpus(&read_text(path)?, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    w.write_all(to_jsonl(items).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}
