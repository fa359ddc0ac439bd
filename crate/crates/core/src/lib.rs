//! Verification of quantitative measurements in chest X-ray reports.
//!
//! The pipeline extracts measured findings from a report, turns them into
//! typed measurement queries, compiles each query into a plan over a small
//! geometric measurement API, executes the plan against a detection backend
//! and rewrites the report with the verified values. The [`eval`] module
//! scores reports for presence, measurement and placement hallucinations.

pub mod backend;
pub mod eval;
pub mod exec;
pub mod extractor;
pub mod geometry;
pub mod mask;
pub mod model;
pub mod plan;
pub mod query;
pub mod updater;

pub use backend::{BackendError, FixtureBackend, FixtureStore, Normalized, RoutingTable, ToolBackend};
pub use eval::{composite, improvement, EvalCase, MetricsTable};
pub use exec::{execute_all, Executor, MeasurementResult, Outcome};
pub use extractor::{
    extract_ett, extract_measured_findings, has_measurement_keywords, normalize_value,
    split_sentences, CategoryLexicon, EttObservation, MeasuredFinding,
};
pub use geometry::{px_distance_to_cm, rescale_coords, GeometryError};
pub use mask::Rle;
pub use model::{BBox, CxrObject, CxrSegmentation, ImageSize, PixelSpacing, PlacementVerdict, StudyRecord};
pub use plan::{compile, Plan, PlanStep};
pub use query::{generate_queries, MeasurementQuery, QueryGate, QueryKind};
pub use updater::{classify_placement, inject_ground_truth, update_report, Guidelines, UpdatedReport};
