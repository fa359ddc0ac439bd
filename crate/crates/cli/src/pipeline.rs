//! Batch orchestration: extract, query, execute and update every model report.

use std::collections::BTreeMap;
use std::sync::Arc;

use chexfix_core::backend::{BackendError, FixtureBackend, Normalized, RoutedBackend, SharedBackend, ToolBackend};
use chexfix_core::exec::{Executor, MeasurementResult, Outcome};
use chexfix_core::extractor::{analyze_ett, extract_measured_findings, CategoryLexicon, CARINA_NAME, ETT_NAME};
use chexfix_core::geometry::round_to_tenth;
use chexfix_core::model::StudyRecord;
use chexfix_core::plan::{compile, Plan};
use chexfix_core::query::{queries_for_report, MeasurementQuery, QueryGate};
use chexfix_core::updater::{
    apply_edits, classify_placement, placement_sentence, update_report_with, Edit, EditKind, Guidelines, NoOp,
};
use chexfix_wire::{EndpointConfig, HttpBackend};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendSpec, ConfigError, PipelineConfig};
use crate::manifest::{CorpusLine, ManifestEntry, Reports};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend setup: {0}")]
    Backend(#[from] BackendError),
    #[error("cannot load fixtures for backend '{id}': {message}")]
    Fixtures { id: String, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("all {0} queries failed; first error: {1}")]
    AllQueriesFailed(usize, String),
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub guidelines: Guidelines,
    pub lexicon: CategoryLexicon,
    pub gate: QueryGate,
    /// Query every image for the tube, even when the report does not
    /// mention one.
    pub all_images: bool,
    /// Worker threads; `None` uses one per logical core.
    pub jobs: Option<usize>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            guidelines: Guidelines::default(),
            lexicon: CategoryLexicon::default(),
            gate: QueryGate::default(),
            all_images: false,
            jobs: None,
        }
    }
}

impl PipelineOptions {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, ConfigError> {
        Ok(Self {
            guidelines: config.guidelines()?,
            lexicon: config.lexicon()?,
            gate: config.query_gate,
            all_images: false,
            jobs: config.jobs,
        })
    }
}

/// Builds the routed, normalized backend described by `config`.
pub fn build_backend(config: &PipelineConfig) -> Result<SharedBackend, PipelineError> {
    let table = config.routing_table()?;
    let mut backends: BTreeMap<String, SharedBackend> = BTreeMap::new();
    for (id, spec) in &config.backends {
        let backend: SharedBackend = match spec {
            BackendSpec::Fixtures { fixtures } => {
                let fx = FixtureBackend::load(id.clone(), fixtures).map_err(|e| PipelineError::Fixtures {
                    id: id.clone(),
                    message: e.to_string(),
                })?;
                Arc::new(Normalized::new(fx).with_min_confidence(config.min_confidence))
            }
            BackendSpec::Http {
                url,
                timeout_ms,
                max_in_flight,
            } => {
                let mut endpoint = EndpointConfig::new(id.clone(), url.clone());
                if let Some(t) = timeout_ms {
                    endpoint.timeout_ms = *t;
                }
                if let Some(n) = max_in_flight {
                    endpoint.max_in_flight = *n;
                }
                Arc::new(Normalized::new(HttpBackend::new(endpoint)).with_min_confidence(config.min_confidence))
            }
        };
        backends.insert(id.clone(), backend);
    }
    Ok(Arc::new(RoutedBackend::new(table, backends)?))
}

/// Everything that happened to one model report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAudit {
    pub study_id: String,
    pub model: String,
    /// Whether the report passed the tube-mention gate.
    pub gated_in: bool,
    pub queries: Vec<MeasurementQuery>,
    pub plans: Vec<Option<Plan>>,
    pub results: Vec<MeasurementResult>,
    pub edits: Vec<Edit>,
    pub no_ops: Vec<NoOp>,
    pub changed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub studies: usize,
    pub reports: usize,
    pub gated_in: usize,
    pub changed: usize,
    pub queries: usize,
    pub failed_queries: usize,
    pub report_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub corpus: Vec<CorpusLine>,
    pub audit: Vec<ReportAudit>,
    pub stats: RunStats,
}

fn has_positive_mention(report: &str, lexicon: &CategoryLexicon) -> (bool, bool) {
    let analysis = analyze_ett(report, lexicon);
    (analysis.mentions_ett(), analysis.ett_sentences.iter().any(|s| s.positive))
}

/// Appends a tube sentence to a report that never mentions the tube.
fn append_detected_tube(report: &str, result: &MeasurementResult, g: &Guidelines) -> Option<Edit> {
    let Outcome::Scalar { value_cm } = result.outcome else {
        return None;
    };
    let d = round_to_tenth(value_cm);
    let sentence = placement_sentence(d, classify_placement(d, g));
    let end = report.trim_end().len();
    let after = match report[..end].chars().last() {
        None => sentence,
        Some('.' | '!' | '?') => format!(" {sentence}"),
        Some(_) => format!(". {sentence}"),
    };
    Some(Edit {
        kind: EditKind::InsertSentence,
        sentence_index: chexfix_core::extractor::split_sentences(report).len(),
        span: (end, end),
        before: String::new(),
        after,
        reason: "tube detected in image but not reported".into(),
        result_index: Some(0),
    })
}

/// Runs one model report through the pipeline using a study-wide executor.
pub fn process_report(
    study_id: &str,
    model: &str,
    report: &str,
    executor: &mut Executor<'_>,
    opts: &PipelineOptions,
) -> (String, ReportAudit) {
    let (mentions, positive) = has_positive_mention(report, &opts.lexicon);
    let mut audit = ReportAudit {
        study_id: study_id.to_string(),
        model: model.to_string(),
        gated_in: mentions || opts.all_images,
        queries: Vec::new(),
        plans: Vec::new(),
        results: Vec::new(),
        edits: Vec::new(),
        no_ops: Vec::new(),
        changed: false,
        error: None,
    };
    if !audit.gated_in {
        return (report.to_string(), audit);
    }

    if opts.all_images && !positive {
        let query = MeasurementQuery::distance(ETT_NAME, CARINA_NAME);
        let result = executor.execute(&query);
        audit.plans.push(compile(&query).ok());
        audit.queries.push(query);
        let edit = append_detected_tube(report, &result, &opts.guidelines);
        audit.results.push(result);
        let Some(edit) = edit else {
            audit.no_ops.push(NoOp {
                result_index: 0,
                reason: "no tube measured in image".into(),
            });
            return (report.to_string(), audit);
        };
        let text = apply_edits(report, std::slice::from_ref(&edit)).expect("append at end of text");
        audit.edits.push(edit);
        audit.changed = text != report;
        return (text, audit);
    }

    let analysis = analyze_ett(report, &opts.lexicon);
    let findings = extract_measured_findings(report, &opts.lexicon);
    let queries = queries_for_report(&findings, &analysis.observation, opts.gate);
    audit.plans = queries.iter().map(|q| compile(q).ok()).collect();
    audit.results = queries.iter().map(|q| executor.execute(q)).collect();
    audit.queries = queries;
    match update_report_with(report, &audit.results, &opts.guidelines, &opts.lexicon) {
        Ok(updated) => {
            audit.edits = updated.edits;
            audit.no_ops = updated.no_ops;
            audit.changed = updated.text != report;
            (updated.text, audit)
        }
        Err(e) => {
            audit.error = Some(e.to_string());
            (report.to_string(), audit)
        }
    }
}

fn process_study(entry: &ManifestEntry, backend: &dyn ToolBackend, opts: &PipelineOptions) -> (CorpusLine, Vec<ReportAudit>) {
    let study: StudyRecord = entry.study();
    let mut executor = Executor::new(&study, backend);
    let mut models = BTreeMap::new();
    let mut audits = Vec::with_capacity(entry.reports.models.len());
    for (model, text) in &entry.reports.models {
        let (updated, audit) = process_report(&entry.study_id, model, text, &mut executor, opts);
        models.insert(model.clone(), updated);
        audits.push(audit);
    }
    let line = CorpusLine {
        study_id: entry.study_id.clone(),
        reports: Reports {
            ground_truth: entry.reports.ground_truth.clone(),
            models,
        },
    };
    (line, audits)
}

/// Updates every model report in `entries`, preserving manifest order.
///
/// Per-report failures are recorded in the audit log. The run as a whole
/// fails only when every query failed, which means no backend answered.
pub fn run_pipeline(
    entries: &[ManifestEntry],
    backend: &dyn ToolBackend,
    opts: &PipelineOptions,
) -> Result<PipelineOutput, PipelineError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| PipelineError::Pool(e.to_string()))?;
    let per_study: Vec<(CorpusLine, Vec<ReportAudit>)> =
        pool.install(|| entries.par_iter().map(|e| process_study(e, backend, opts)).collect());

    let mut stats = RunStats {
        studies: entries.len(),
        ..RunStats::default()
    };
    let mut corpus = Vec::with_capacity(per_study.len());
    let mut audit = Vec::new();
    let mut first_failure = None;
    for (line, audits) in per_study {
        corpus.push(line);
        for a in audits {
            stats.reports += 1;
            stats.gated_in += usize::from(a.gated_in);
            stats.changed += usize::from(a.changed);
            stats.report_errors += usize::from(a.error.is_some());
            stats.queries += a.results.len();
            for r in &a.results {
                if let Outcome::Failed { message } = &r.outcome {
                    stats.failed_queries += 1;
                    first_failure.get_or_insert_with(|| message.clone());
                }
            }
            audit.push(a);
        }
    }
    if stats.queries > 0 && stats.failed_queries == stats.queries {
        return Err(PipelineError::AllQueriesFailed(
            stats.queries,
            first_failure.unwrap_or_default(),
        ));
    }
    Ok(PipelineOutput { corpus, audit, stats })
}
