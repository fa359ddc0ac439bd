//! Hallucination metrics for presence, measurement and placement.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::EttObservation;
use crate::model::PlacementVerdict;
use crate::updater::{classify_placement, Guidelines};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("composite undefined for F1 = {0}")]
    CompositeUndefined(f64),
    #[error("improvement undefined for updated value {0}")]
    ImprovementUndefined(f64),
    #[error("no cases to evaluate")]
    Empty,
    #[error("unknown table format '{0}' (expected csv, md or txt)")]
    Format(String),
}

/// Ground-truth and model observations for one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCase {
    pub study_id: String,
    pub gt: EttObservation,
    pub model: EttObservation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    /// Counts `(label, prediction)` pairs, positive class `true`.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut m = Self::default();
        for (label, pred) in pairs {
            match (label, pred) {
                (true, true) => m.tp += 1,
                (false, true) => m.fp += 1,
                (false, false) => m.tn += 1,
                (true, false) => m.fn_ += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> BinaryMetrics {
        let mut degenerate = Vec::new();
        let mut ratio = |num: usize, den: usize, name: &'static str| {
            if den == 0 {
                degenerate.push(name.to_string());
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp, "precision");
        let recall = ratio(self.tp, self.tp + self.fn_, "recall");
        let f1 = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_, "f1");
        let tnr = ratio(self.tn, self.tn + self.fp, "specificity");
        BinaryMetrics {
            precision,
            recall,
            f1,
            bacc: (recall + tnr) / 2.0,
            confusion: *self,
            degenerate,
        }
    }
}

/// Binary-classification scores. Any ratio whose denominator is zero is
/// reported as 0 and named in `degenerate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub bacc: f64,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl BinaryMetrics {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate.is_empty()
    }
}

pub fn presence_metrics(cases: &[EvalCase]) -> Result<BinaryMetrics, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(ConfusionMatrix::from_pairs(cases.iter().map(|c| (c.gt.present, c.model.present))).metrics())
}

/// Absolute errors over cases where the ground truth gives a value and the
/// model mentions the tube; a missing model value counts as 0.
pub fn measurement_errors(cases: &[EvalCase]) -> Vec<f64> {
    cases
        .iter()
        .filter(|c| c.model.present)
        .filter_map(|c| {
            let gt = c.gt.measurement_cm?;
            Some((gt - c.model.measurement_cm.unwrap_or(0.0)).abs())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementStats {
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    pub max: f64,
    pub min: f64,
    /// Mean error; equal to `mae` by construction.
    pub avg: f64,
    /// Population standard deviation of the errors.
    pub std: f64,
}

impl MeasurementStats {
    pub fn from_errors(errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let n = errors.len() as f64;
        let mae = errors.iter().sum::<f64>() / n;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mae).powi(2)).sum::<f64>() / n;
        Some(Self {
            n: errors.len(),
            mae,
            mse,
            max: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: errors.iter().copied().fold(f64::INFINITY, f64::min),
            avg: mae,
            std: var.sqrt(),
        })
    }
}

/// MAE divided by presence F1; lower is better.
pub fn composite(mae: f64, f1: f64) -> Result<f64, EvalError> {
    if !(f1 > 0.0 && f1 <= 1.0) {
        return Err(EvalError::CompositeUndefined(f1));
    }
    Ok(mae / f1)
}

/// Fraction of errors strictly above `threshold_cm`.
pub fn failure_rate(errors: &[f64], threshold_cm: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e > threshold_cm).count() as f64 / errors.len() as f64
}

pub const DEFAULT_FAILURE_THRESHOLD_CM: f64 = 1.5;

/// Relative gain `100 (original - updated) / updated`, unrounded.
pub fn improvement_exact(original: f64, updated: f64) -> Result<f64, EvalError> {
    if !(updated > 0.0) {
        return Err(EvalError::ImprovementUndefined(updated));
    }
    Ok(100.0 * (original - updated) / updated)
}

/// Relative gain rounded to a whole percent.
pub fn improvement(original: f64, updated: f64) -> Result<f64, EvalError> {
    improvement_exact(original, updated).map(f64::round)
}

/// Placement judged from a report: a measurement decides, then an explicit
/// statement, and a tube with neither is taken as correctly placed.
pub fn effective_placement(obs: &EttObservation, g: &Guidelines) -> PlacementVerdict {
    match (obs.measurement_cm, obs.placement) {
        (Some(d), _) => classify_placement(d, g),
        (None, Some(v)) => v,
        (None, None) => PlacementVerdict::Correct,
    }
}

/// Placement scores over cases where both reports mention the tube, with
/// "correct" as the positive class.
pub fn placement_metrics(cases: &[EvalCase], g: &Guidelines) -> Result<BinaryMetrics, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(ConfusionMatrix::from_pairs(
        cases
            .iter()
            .filter(|c| c.gt.present && c.model.present)
            .map(|c| {
                (
                    effective_placement(&c.gt, g).is_correct(),
                    effective_placement(&c.model, g).is_correct(),
                )
            }),
    )
    .metrics())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSummary {
    pub stats: Option<MeasurementStats>,
    pub composite: Option<f64>,
    pub failure_rate: f64,
}

/// All metrics for one report variant of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub cases: usize,
    pub presence: BinaryMetrics,
    pub measurement: MeasurementSummary,
    pub placement: BinaryMetrics,
}

impl MetricsTable {
    pub fn cells(&self) -> TableCells {
        TableCells {
            presence_precision: self.presence.precision,
            mae: self.measurement.stats.map_or(0.0, |s| s.mae),
            composite: self.measurement.composite.unwrap_or(f64::NAN),
            placement_precision: self.placement.precision,
        }
    }
}

pub fn evaluate(cases: &[EvalCase], g: &Guidelines) -> Result<MetricsTable, EvalError> {
    let presence = presence_metrics(cases)?;
    let errors = measurement_errors(cases);
    let stats = MeasurementStats::from_errors(&errors);
    let composite = stats.and_then(|s| composite(s.mae, presence.f1).ok());
    Ok(MetricsTable {
        cases: cases.len(),
        presence,
        measurement: MeasurementSummary {
            stats,
            composite,
            failure_rate: failure_rate(&errors, DEFAULT_FAILURE_THRESHOLD_CM),
        },
        placement: placement_metrics(cases, g)?,
    })
}

/// The four per-variant numbers shown in the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableCells {
    pub presence_precision: f64,
    pub mae: f64,
    pub composite: f64,
    pub placement_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub original: TableCells,
    pub updated: TableCells,
    /// `None` when the updated value is zero or undefined.
    pub mae_improvement_pct: Option<f64>,
    pub composite_improvement_pct: Option<f64>,
}

impl ComparisonRow {
    pub fn new(model: impl Into<String>, original: TableCells, updated: TableCells) -> Self {
        Self {
            model: model.into(),
            mae_improvement_pct: improvement(original.mae, updated.mae).ok(),
            composite_improvement_pct: improvement(original.composite, updated.composite).ok(),
            original,
            updated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<ComparisonRow>,
    /// Unweighted means; improvements are computed from the mean values.
    pub average: ComparisonRow,
    /// Mean of the defined per-model MAE and Composite improvements.
    pub mean_of_improvements_pct: (Option<f64>, Option<f64>),
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn mean_cells(cells: &[TableCells]) -> TableCells {
    TableCells {
        presence_precision: mean(cells.iter().map(|c| c.presence_precision)),
        mae: mean(cells.iter().map(|c| c.mae)),
        composite: mean(cells.iter().map(|c| c.composite)),
        placement_precision: mean(cells.iter().map(|c| c.placement_precision)),
    }
}

pub fn summarize(rows: Vec<ComparisonRow>) -> Result<Summary, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty);
    }
    let original: Vec<TableCells> = rows.iter().map(|r| r.original).collect();
    let updated: Vec<TableCells> = rows.iter().map(|r| r.updated).collect();
    let average = ComparisonRow::new("Average", mean_cells(&original), mean_cells(&updated));
    let defined_mean = |values: Vec<f64>| (!values.is_empty()).then(|| mean(values.into_iter()));
    let mean_of_improvements_pct = (
        defined_mean(rows.iter().filter_map(|r| r.mae_improvement_pct).collect()),
        defined_mean(rows.iter().filter_map(|r| r.composite_improvement_pct).collect()),
    );
    Ok(Summary {
        rows,
        average,
        mean_of_improvements_pct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Md,
    #[default]
    Txt,
}

impl FromStr for TableFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Md),
            "txt" | "text" => Ok(Self::Txt),
            _ => Err(EvalError::Format(s.to_string())),
        }
    }
}

const HEADER: [&str; 11] = [
    "Model",
    "Presence P (orig)",
    "Presence P (upd)",
    "MAE (orig)",
    "MAE (upd)",
    "MAE impr. %",
    "Composite (orig)",
    "Composite (upd)",
    "Composite impr. %",
    "Placement P (orig)",
    "Placement P (upd)",
];

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.0}"))
}

fn row_cells(r: &ComparisonRow) -> Vec<String> {
    let f2 = |v: f64| format!("{v:.2}");
    vec![
        r.model.clone(),
        f2(r.original.presence_precision),
        f2(r.updated.presence_precision),
        f2(r.original.mae),
        f2(r.updated.mae),
        pct(r.mae_improvement_pct),
        f2(r.original.composite),
        f2(r.updated.composite),
        pct(r.composite_improvement_pct),
        f2(r.original.placement_precision),
        f2(r.updated.placement_precision),
    ]
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders the comparison table, one row per model plus the average.
pub fn render_summary(summary: &Summary, format: TableFormat) -> String {
    let mut rows: Vec<Vec<String>> = summary.rows.iter().map(row_cells).collect();
    rows.push(row_cells(&summary.average));
    let header: Vec<String> = HEADER.iter().map(|s| s.to_string()).collect();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            for r in std::iter::once(&header).chain(rows.iter()) {
                let line: Vec<String> = r.iter().map(|c| csv_field(c)).collect();
                let _ = writeln!(out, "{}", line.join(","));
            }
        }
        TableFormat::Md => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(
                out,
                "|{}",
                header.iter().enumerate().map(|(i, _)| if i == 0 { "---|" } else { "---:|" }).collect::<String>()
            );
            for r in &rows {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
        }
        TableFormat::Txt => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| std::iter::once(&header).chain(rows.iter()).map(|r| r[i].len()).max().unwrap_or(0))
                .collect();
            let line = |r: &Vec<String>| {
                r.iter()
                    .enumerate()
                    .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(out, "{}", line(&header));
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            for (i, r) in rows.iter().enumerate() {
                if i + 1 == rows.len() {
                    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                }
                let _ = writeln!(out, "{}", line(r));
            }
        }
    }
    out
}
