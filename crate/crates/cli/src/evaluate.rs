//! Corpus-level evaluation of original against updated reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chexfix_core::eval::{evaluate, summarize, ComparisonRow, EvalCase, EvalError, MetricsTable, Summary};
use chexfix_core::extractor::{extract_ett_with, CategoryLexicon};
use chexfix_core::updater::Guidelines;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::CorpusLine;

/// Study ids or report sets that differ between corpora.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentError {
    pub missing_from_original: Vec<String>,
    pub missing_from_updated: Vec<String>,
    pub missing_from_ground_truth: Vec<String>,
    /// Studies whose original and updated corpora name different models.
    pub model_mismatch: Vec<String>,
}

impl AlignmentError {
    fn is_empty(&self) -> bool {
        self.missing_from_original.is_empty()
            && self.missing_from_updated.is_empty()
            && self.missing_from_ground_truth.is_empty()
            && self.model_mismatch.is_empty()
    }
}

impl fmt::Display for AlignmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "corpora are not aligned on study_id")?;
        for (label, ids) in [
            ("missing from original", &self.missing_from_original),
            ("missing from updated", &self.missing_from_updated),
            ("missing from ground truth", &self.missing_from_ground_truth),
            ("different model sets", &self.model_mismatch),
        ] {
            if !ids.is_empty() {
                write!(f, "; {label}: {}", ids.join(", "))?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for AlignmentError {}

#[derive(Debug, Error)]
pub enum EvalRunError {
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("model '{model}': {source}")]
    Metrics { model: String, source: EvalError },
    #[error("no model reports to evaluate")]
    NoModels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: String,
    pub original: MetricsTable,
    pub updated: MetricsTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub models: Vec<ModelEvaluation>,
    pub summary: Summary,
}

fn ids(corpus: &[CorpusLine]) -> BTreeSet<&str> {
    corpus.iter().map(|c| c.study_id.as_str()).collect()
}

fn check_alignment(gt: &[CorpusLine], original: &[CorpusLine], updated: &[CorpusLine]) -> Result<(), AlignmentError> {
    let (g, o, u) = (ids(gt), ids(original), ids(updated));
    let all: BTreeSet<&str> = g.iter().chain(&o).chain(&u).copied().collect();
    let missing = |set: &BTreeSet<&str>| all.iter().filter(|id| !set.contains(*id)).map(|s| s.to_string()).collect();
    let updated_by_id: BTreeMap<&str, &CorpusLine> = updated.iter().map(|c| (c.study_id.as_str(), c)).collect();
    let model_mismatch = original
        .iter()
        .filter(|c| {
            updated_by_id
                .get(c.study_id.as_str())
                .is_some_and(|u| !u.reports.models.keys().eq(c.reports.models.keys()))
        })
        .map(|c| c.study_id.clone())
        .collect();
    let err = AlignmentError {
        missing_from_original: missing(&o),
        missing_from_updated: missing(&u),
        missing_from_ground_truth: missing(&g),
        model_mismatch,
    };
    if err.is_empty() {
        Ok(())
    } else {
        Err(err)
    }
}

/// Scores every model's original and updated reports against the ground
/// truth, in ground-truth corpus order.
pub fn run_eval(
    gt: &[CorpusLine],
    original: &[CorpusLine],
    updated: &[CorpusLine],
    g: &Guidelines,
    lexicon: &CategoryLexicon,
) -> Result<EvalOutput, EvalRunError> {
    check_alignment(gt, original, updated)?;
    let original: BTreeMap<&str, &CorpusLine> = original.iter().map(|c| (c.study_id.as_str(), c)).collect();
    let updated: BTreeMap<&str, &CorpusLine> = updated.iter().map(|c| (c.study_id.as_str(), c)).collect();
    let models: BTreeSet<&str> = original.values().flat_map(|c| c.reports.models.keys()).map(String::as_str).collect();
    if models.is_empty() {
        return Err(EvalRunError::NoModels);
    }

    let mut evaluations = Vec::with_capacity(models.len());
    for model in models {
        let mut orig_cases = Vec::new();
        let mut upd_cases = Vec::new();
        for line in gt {
            let id = line.study_id.as_str();
            let (Some(o), Some(u)) = (
                original[id].reports.models.get(model),
                updated[id].reports.models.get(model),
            ) else {
                continue;
            };
            let gt_obs = extract_ett_with(&line.reports.ground_truth, lexicon);
            orig_cases.push(EvalCase {
                study_id: id.to_string(),
                gt: gt_obs,
                model: extract_ett_with(o, lexicon),
            });
            upd_cases.push(EvalCase {
                study_id: id.to_string(),
                gt: gt_obs,
                model: extract_ett_with(u, lexicon),
            });
        }
        let metrics = |cases: &[EvalCase]| {
            evaluate(cases, g).map_err(|source| EvalRunError::Metrics {
                model: model.to_string(),
                source,
            })
        };
        evaluations.push(ModelEvaluation {
            model: model.to_string(),
            original: metrics(&orig_cases)?,
            updated: metrics(&upd_cases)?,
        });
    }
    let rows = evaluations
        .iter()
        .map(|m| ComparisonRow::new(m.model.clone(), m.original.cells(), m.updated.cells()))
        .collect();
    let summary = summarize(rows).map_err(|source| EvalRunError::Metrics {
        model: "Average".into(),
        source,
    })?;
    Ok(EvalOutput {
        models: evaluations,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Reports;

    fn line(id: &str, gt: &str, models: &[(&str, &str)]) -> CorpusLine {
        CorpusLine {
            study_id: id.into(),
            reports: Reports {
                ground_truth: gt.into(),
                models: models.iter().map(|(m, t)| (m.to_string(), t.to_string())).collect(),
            },
        }
    }

    #[test]
    fn misaligned_ids_are_listed() {
        let a = vec![line("s1", "x", &[("m", "y")]), line("s2", "x", &[("m", "y")])];
        let b = vec![line("s1", "x", &[("m", "y")]), line("s3", "x", &[("m", "y")])];
        let err = run_eval(&a, &a, &b, &Guidelines::default(), &CategoryLexicon::default()).unwrap_err();
        let EvalRunError::Alignment(err) = err else { panic!("{err}") };
        assert_eq!(err.missing_from_updated, vec!["s2"]);
        assert_eq!(err.missing_from_original, vec!["s3"]);
        assert_eq!(err.missing_from_ground_truth, vec!["s3"]);
        assert!(err.to_string().contains("missing from updated: s2"));
    }

    #[test]
    fn model_sets_must_match() {
        let a = vec![line("s1", "x", &[("m", "y")])];
        let b = vec![line("s1", "x", &[("n", "y")])];
        let err = run_eval(&a, &a, &b, &Guidelines::default(), &CategoryLexicon::default()).unwrap_err();
        assert!(matches!(err, EvalRunError::Alignment(ref e) if e.model_mismatch == vec!["s1"]), "{err}");
    }

    #[test]
    fn identical_corpora_give_zero_improvement() {
        let c = vec![
            line("s1", "ETT tip 4.0 cm above the carina.", &[("m", "ETT tip 5.0 cm above the carina.")]),
            line("s2", "No tubes.", &[("m", "ET tube 3 cm above the carina.")]),
        ];
        let out = run_eval(&c, &c, &c, &Guidelines::default(), &CategoryLexicon::default()).unwrap();
        let row = &out.summary.rows[0];
        assert_eq!(row.mae_improvement_pct, Some(0.0));
        assert_eq!(row.composite_improvement_pct, Some(0.0));
        assert_eq!(out.models[0].original, out.models[0].updated);
        assert_eq!(out.models[0].original.presence.precision, 0.5);
    }
}
