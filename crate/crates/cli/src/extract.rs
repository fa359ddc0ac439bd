//! Per-report extraction view used by the `extract` verb.

use chexfix_core::extractor::{
    analyze_ett, extract_measured_findings, has_keywords, CategoryLexicon, EttObservation, MeasuredFinding,
};
use chexfix_core::query::{queries_for_report, MeasurementQuery, QueryGate};
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestEntry;

pub const GROUND_TRUTH: &str = "ground_truth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub study_id: String,
    /// `ground_truth` or a model name.
    pub report: String,
    pub has_keywords: bool,
    pub mentions_ett: bool,
    pub ett: EttObservation,
    pub findings: Vec<MeasuredFinding>,
    pub queries: Vec<MeasurementQuery>,
}

pub fn extract_report<S: AsRef<str>>(
    study_id: &str,
    report_name: &str,
    text: &str,
    lexicon: &CategoryLexicon,
    keywords: &[S],
    gate: QueryGate,
) -> ExtractRecord {
    let analysis = analyze_ett(text, lexicon);
    let findings = extract_measured_findings(text, lexicon);
    let queries = queries_for_report(&findings, &analysis.observation, gate);
    ExtractRecord {
        study_id: study_id.to_string(),
        report: report_name.to_string(),
        has_keywords: has_keywords(text, keywords),
        mentions_ett: analysis.mentions_ett(),
        ett: analysis.observation,
        findings,
        queries,
    }
}

/// Ground truth first, then model reports in name order.
pub fn extract_manifest<S: AsRef<str>>(
    entries: &[ManifestEntry],
    lexicon: &CategoryLexicon,
    keywords: &[S],
    gate: QueryGate,
) -> Vec<ExtractRecord> {
    entries
        .iter()
        .flat_map(|e| {
            std::iter::once((GROUND_TRUTH, &e.reports.ground_truth))
                .chain(e.reports.models.iter().map(|(m, t)| (m.as_str(), t)))
                .map(move |(name, text)| extract_report(&e.study_id, name, text, lexicon, keywords, gate))
        })
        .collect()
}
