//! Adds annotated tube distances to ground-truth reports.

use chexfix_core::backend::FixtureStore;
use chexfix_core::extractor::CategoryLexicon;
use chexfix_core::updater::{inject_ground_truth, Edit};
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestEntry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub study_id: String,
    pub injected: bool,
    pub edits: Vec<Edit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

/// Returns the manifest with measurements injected where the ground truth
/// mentions the tube without a value and the annotations locate both the
/// tip and the carina.
pub fn inject_gt(
    entries: &[ManifestEntry],
    store: &FixtureStore,
    lexicon: &CategoryLexicon,
) -> (Vec<ManifestEntry>, Vec<InjectionRecord>) {
    let mut out = Vec::with_capacity(entries.len());
    let mut log = Vec::with_capacity(entries.len());
    for entry in entries {
        let mut record = InjectionRecord {
            study_id: entry.study_id.clone(),
            injected: false,
            edits: Vec::new(),
            skipped: None,
        };
        let mut entry = entry.clone();
        match store.get(&entry.study_id) {
            None => record.skipped = Some("no annotation".into()),
            Some(ann) => match inject_ground_truth(&entry.reports.ground_truth, ann, &entry.study(), lexicon) {
                Ok(updated) if updated.edits.is_empty() => {
                    record.skipped = Some("report does not need a value".into());
                }
                Ok(updated) => {
                    entry.reports.ground_truth = updated.text;
                    record.injected = true;
                    record.edits = updated.edits;
                }
                Err(e) => record.skipped = Some(e.to_string()),
            },
        }
        out.push(entry);
        log.push(record);
    }
    (out, log)
}
