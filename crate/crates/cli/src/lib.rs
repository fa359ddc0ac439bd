//! Batch pipeline around `chexfix-core`: manifest and corpus ingest, TOML
//! configuration, parallel report updating with an audit log, ground-truth
//! injection and corpus evaluation.

pub mod config;
pub mod evaluate;
pub mod extract;
pub mod inject;
pub mod manifest;
pub mod pipeline;

pub use config::{BackendSpec, NamedBackend, PipelineConfig, CONFIG_ENV};
pub use evaluate::{run_eval, AlignmentError, EvalOutput, EvalRunError};
pub use inject::{inject_gt, InjectionRecord};
pub use manifest::{load_corpus, load_manifest, CorpusLine, ManifestEntry, Reports};
pub use pipeline::{build_backend, run_pipeline, PipelineError, PipelineOptions, PipelineOutput, ReportAudit};
