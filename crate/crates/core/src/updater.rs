//! Rewriting reports from measurement results.
//!
//! Every change is an [`Edit`] over a byte span of the input text, so the
//! output can always be reproduced with [`apply_edits`]. Sentences that do
//! not mention a queried object are never touched.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{object_key, FixtureAnnotation};
use crate::exec::{select_singleton, MeasurementResult, Outcome};
use crate::extractor::{
    analyze_ett, extract_measured_findings, split_sentences, CategoryLexicon, Direction, EttSentence,
    MeasuredFinding, Polarity, Sentence, CARINA_NAME, ETT_NAME,
};
use crate::geometry::{center_distance_cm, format_cm, round_to_tenth};
use crate::model::{CxrObject, PlacementVerdict, StudyRecord};
use crate::query::QueryKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UpdateError {
    #[error("result {result_index} measures '{object}', which the report does not mention")]
    Consistency { result_index: usize, object: String },
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("invalid guidelines: {0}")]
    Guidelines(String),
    #[error("edits do not apply: {0}")]
    EditConflict(String),
}

/// Placement rules for the endotracheal tube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guidelines {
    /// Closed interval of tip-to-carina distances judged correct.
    pub ett_correct_range_cm: (f64, f64),
    /// Ideal distance and tolerance, for display only.
    pub ett_ideal_cm: (f64, f64),
}

impl Default for Guidelines {
    fn default() -> Self {
        Self {
            ett_correct_range_cm: (3.0, 7.0),
            ett_ideal_cm: (5.0, 2.0),
        }
    }
}

impl Guidelines {
    pub fn new(lower_cm: f64, upper_cm: f64) -> Result<Self, UpdateError> {
        let g = Self {
            ett_correct_range_cm: (lower_cm, upper_cm),
            ett_ideal_cm: ((lower_cm + upper_cm) / 2.0, (upper_cm - lower_cm) / 2.0),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), UpdateError> {
        let (lo, hi) = self.ett_correct_range_cm;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return Err(UpdateError::Guidelines(format!(
                "correct range [{lo}, {hi}] must be positive and increasing"
            )));
        }
        Ok(())
    }
}

/// Verdict for a signed tip-to-carina distance; both endpoints are correct.
pub fn classify_placement(distance_cm: f64, g: &Guidelines) -> PlacementVerdict {
    let (lo, hi) = g.ett_correct_range_cm;
    if distance_cm.is_nan() {
        PlacementVerdict::IncorrectUnspecified
    } else if distance_cm < lo {
        PlacementVerdict::TooLow
    } else if distance_cm > hi {
        PlacementVerdict::TooHigh
    } else {
        PlacementVerdict::Correct
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Replace,
    RemoveSentence,
    AppendClause,
    InsertSentence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub sentence_index: usize,
    /// Byte span in the input text.
    pub span: (usize, usize),
    pub before: String,
    pub after: String,
    pub reason: String,
    /// Index into `results_used`; `None` for ground-truth injection.
    pub result_index: Option<usize>,
}

/// A result that was considered and deliberately left without effect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoOp {
    pub result_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdatedReport {
    pub text: String,
    pub edits: Vec<Edit>,
    pub no_ops: Vec<NoOp>,
    pub results_used: Vec<MeasurementResult>,
}

impl UpdatedReport {
    fn unchanged(report: &str) -> Self {
        Self {
            text: report.to_string(),
            edits: Vec::new(),
            no_ops: Vec::new(),
            results_used: Vec::new(),
        }
    }
}

/// Applies non-overlapping edits to `original`. Each edit's `before` must
/// match the text it replaces.
pub fn apply_edits(original: &str, edits: &[Edit]) -> Result<String, UpdateError> {
    let mut sorted: Vec<&Edit> = edits.iter().collect();
    sorted.sort_by_key(|e| (e.span.0, e.span.1));
    for pair in sorted.windows(2) {
        if pair[0].span.1 > pair[1].span.0 {
            return Err(UpdateError::EditConflict(format!(
                "spans {:?} and {:?} overlap",
                pair[0].span, pair[1].span
            )));
        }
    }
    let mut out = String::with_capacity(original.len());
    let mut cursor = 0;
    for e in sorted {
        let (s, t) = e.span;
        if t > original.len() || !original.is_char_boundary(s) || !original.is_char_boundary(t) {
            return Err(UpdateError::EditConflict(format!("span {:?} out of range", e.span)));
        }
        if original[s..t] != e.before {
            return Err(UpdateError::EditConflict(format!(
                "span {:?} holds {:?}, edit expects {:?}",
                e.span,
                &original[s..t],
                e.before
            )));
        }
        out.push_str(&original[cursor..s]);
        out.push_str(&e.after);
        cursor = t;
    }
    out.push_str(&original[cursor..]);
    Ok(out)
}

/// The sentence inserted into ground-truth reports.
pub fn measurement_sentence(distance_cm: f64) -> String {
    format!("The endotracheal tube tip is {} cm above the carina.", format_cm(distance_cm))
}

/// The full tube sentence including the placement verdict.
pub fn placement_sentence(distance_cm: f64, verdict: PlacementVerdict) -> String {
    let mut s = format!(
        "The endotracheal tube tip is {} cm above the carina; position is {}.",
        format_cm(distance_cm),
        verdict.phrase()
    );
    if !verdict.is_correct() {
        s.push_str(" Repositioning is recommended.");
    }
    s
}

static BELOW_AFTER_VALUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(\s*(?:\w+\s+){0,2}?)(?:below|distal\s+to|beyond|inferior\s+to)\b").expect("direction regex")
});

/// Collects edits while rejecting overlaps.
struct EditSet<'a> {
    text: &'a str,
    sentences: Vec<Sentence>,
    edits: Vec<Edit>,
    no_ops: Vec<NoOp>,
    removed: Vec<usize>,
}

impl<'a> EditSet<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            sentences: split_sentences(text),
            edits: Vec::new(),
            no_ops: Vec::new(),
            removed: Vec::new(),
        }
    }

    fn sentence_at(&self, pos: usize) -> usize {
        self.sentences
            .iter()
            .find(|s| pos >= s.start && pos < s.end)
            .or(self.sentences.last())
            .map_or(0, |s| s.index)
    }

    fn no_op(&mut self, result_index: usize, reason: impl Into<String>) {
        self.no_ops.push(NoOp {
            result_index,
            reason: reason.into(),
        });
    }

    fn push(&mut self, kind: EditKind, span: (usize, usize), after: String, reason: &str, result_index: usize) {
        let before = self.text[span.0..span.1].to_string();
        if before == after {
            self.no_op(result_index, format!("{reason}: already consistent"));
            return;
        }
        let overlaps = |e: &Edit| {
            let (a, b) = e.span;
            // zero-width insertions only clash when strictly inside a span
            (span.0 < b && a < span.1) || (a == b && span.0 < a && a < span.1) || (span.0 == span.1 && a < span.0 && span.0 < b)
        };
        if let Some(existing) = self.edits.iter().find(|e| overlaps(e)) {
            let note = if existing.span == span && existing.after == after {
                format!("{reason}: duplicate of an earlier edit")
            } else {
                format!("{reason}: conflicts with an earlier edit")
            };
            self.no_op(result_index, note);
            return;
        }
        let sentence_index = self.sentence_at(span.0);
        self.edits.push(Edit {
            kind,
            sentence_index,
            span,
            before,
            after,
            reason: reason.to_string(),
            result_index: Some(result_index),
        });
    }

    fn mark_removed(&mut self, sentence_index: usize, result_index: usize, reason: &str) {
        if self.removed.contains(&sentence_index) {
            self.no_op(result_index, format!("{reason}: sentence already removed"));
            return;
        }
        self.removed.push(sentence_index);
        let s = self.sentences[sentence_index];
        self.edits.push(Edit {
            kind: EditKind::RemoveSentence,
            sentence_index,
            span: (s.start, s.end),
            before: self.text[s.start..s.end].to_string(),
            after: String::new(),
            reason: reason.to_string(),
            result_index: Some(result_index),
        });
    }

    /// Removals take precedence over edits inside the removed sentences, and
    /// a removed tail also drops the whitespace before it.
    fn finish(mut self) -> (Vec<Edit>, Vec<NoOp>) {
        let removed = self.removed.clone();
        let mut kept = Vec::new();
        for e in self.edits.drain(..) {
            if e.kind != EditKind::RemoveSentence && removed.contains(&e.sentence_index) {
                if let Some(i) = e.result_index {
                    self.no_ops.push(NoOp {
                        result_index: i,
                        reason: format!("{}: superseded by sentence removal", e.reason),
                    });
                }
                continue;
            }
            kept.push(e);
        }
        // Extend a removal that reaches the end of the text back over the
        // preceding kept sentence's trailing whitespace.
        let n = self.sentences.len();
        if n > 0 && removed.contains(&(n - 1)) {
            let mut first = n - 1;
            while first > 0 && removed.contains(&(first - 1)) {
                first -= 1;
            }
            if first > 0 {
                let prev = self.sentences[first - 1];
                if let Some(e) = kept
                    .iter_mut()
                    .find(|e| e.kind == EditKind::RemoveSentence && e.sentence_index == first)
                {
                    e.span.0 = prev.content_end;
                    e.before = self.text[e.span.0..e.span.1].to_string();
                }
            }
        }
        kept.sort_by_key(|e| (e.span.0, e.span.1));
        self.no_ops.sort_by_key(|n| n.result_index);
        (kept, self.no_ops)
    }
}

fn render_outcome(outcome: &Outcome) -> Option<String> {
    match outcome {
        Outcome::Scalar { value_cm } => Some(format!("{} cm", format_cm(*value_cm))),
        Outcome::Dims { major_cm, minor_cm } => {
            Some(format!("{} x {} cm", format_cm(*major_cm), format_cm(*minor_cm)))
        }
        _ => None,
    }
}

fn terminator_edit(text: &str, s: &Sentence, clause: &str, tail: &str) -> ((usize, usize), String) {
    let content = s.text(text);
    match content.chars().last() {
        Some(c @ ('.' | '!' | '?')) => {
            let p = s.content_end - c.len_utf8();
            ((p, s.content_end), format!("{clause}{c}{tail}"))
        }
        _ => ((s.content_end, s.content_end), format!("{clause}.{tail}")),
    }
}

fn positive_mentions(text: &str, s: &Sentence, lexicon: &CategoryLexicon, object: &str) -> bool {
    lexicon
        .find_mentions(text, s.content_start, s.content_end)
        .iter()
        .any(|m| object_key(&m.object_name) == object && !crate::extractor::is_negated_at(text, s, m.start))
}

fn is_ett_distance(result: &MeasurementResult) -> bool {
    result.query.kind == QueryKind::DistanceBetween
        && object_key(&result.query.subject) == ETT_NAME
        && result
            .query
            .reference
            .as_deref()
            .is_some_and(|r| object_key(r) == CARINA_NAME)
}

fn update_ett(
    set: &mut EditSet<'_>,
    positives: &[&EttSentence],
    value_cm: f64,
    g: &Guidelines,
    result_index: usize,
) {
    let text = set.text;
    let d = round_to_tenth(value_cm);
    let verdict = classify_placement(d, g);
    let disagrees = |s: &EttSentence| s.cues.iter().any(|c| c.verdict != verdict);
    let target = positives
        .iter()
        .copied()
        .find(|s| s.finding.is_some())
        .unwrap_or(positives[0]);
    // cues that survive this update: contradicting sentences are removed below
    let any_cue = positives.iter().any(|s| !s.cues.is_empty() && !disagrees(s));

    if disagrees(target) {
        let s = target.sentence;
        set.push(
            EditKind::Replace,
            (s.content_start, s.content_end),
            placement_sentence(d, verdict),
            "tube sentence rewritten with verified distance and placement",
            result_index,
        );
    } else if let Some(f) = &target.finding {
        let mut span = f.char_span;
        let mut after = format!("{} cm", format_cm(d));
        if f.direction == Some(Direction::Below) {
            if let Some(c) = BELOW_AFTER_VALUE.captures(&text[span.1..target.sentence.content_end]) {
                after.push_str(&c[1]);
                after.push_str("above");
                span.1 += c.get(0).expect("whole match").end();
            }
        }
        set.push(EditKind::Replace, span, after, "tube distance replaced", result_index);
        if !any_cue {
            let tail = if verdict.is_correct() { "" } else { " Repositioning is recommended." };
            let (span, after) = terminator_edit(
                text,
                &target.sentence,
                &format!("; position is {}", verdict.phrase()),
                tail,
            );
            set.push(EditKind::AppendClause, span, after, "placement clause added", result_index);
        }
    } else {
        let sentence = if any_cue { measurement_sentence(d) } else { placement_sentence(d, verdict) };
        let s = target.sentence;
        let (span, after) = match s.text(text).chars().last() {
            Some('.' | '!' | '?') => ((s.content_end, s.content_end), format!(" {sentence}")),
            _ => ((s.content_end, s.content_end), format!(". {sentence}")),
        };
        set.push(EditKind::InsertSentence, span, after, "tube distance inserted", result_index);
    }

    for s in positives {
        if s.sentence.index != target.sentence.index && disagrees(s) {
            set.mark_removed(s.sentence.index, result_index, "placement statement contradicts verified distance");
        }
    }
}

fn choose_finding<'f>(
    findings: &'f [MeasuredFinding],
    result: &MeasurementResult,
    rendered: &str,
    text: &str,
) -> Option<&'f MeasuredFinding> {
    let object = object_key(&result.query.subject);
    let candidates: Vec<&MeasuredFinding> = findings
        .iter()
        .filter(|f| f.polarity == Polarity::Present && object_key(&f.object_name) == object)
        .collect();
    if let Some(src) = &result.query.source_finding {
        if let Some(f) = candidates.iter().find(|f| f.char_span == src.char_span) {
            return Some(f);
        }
    }
    candidates
        .iter()
        .find(|f| text[f.char_span.0..f.char_span.1] == *rendered)
        .or(candidates.first())
        .copied()
}

pub fn update_report(report: &str, results: &[MeasurementResult], g: &Guidelines) -> Result<UpdatedReport, UpdateError> {
    update_report_with(report, results, g, &CategoryLexicon::default())
}

pub fn update_report_with(
    report: &str,
    results: &[MeasurementResult],
    g: &Guidelines,
    lexicon: &CategoryLexicon,
) -> Result<UpdatedReport, UpdateError> {
    g.validate()?;
    let mut set = EditSet::new(report);
    let analysis = analyze_ett(report, lexicon);
    let ett_positives: Vec<&EttSentence> = analysis.ett_sentences.iter().filter(|s| s.positive).collect();
    let findings = extract_measured_findings(report, lexicon);

    for (i, result) in results.iter().enumerate() {
        match &result.outcome {
            Outcome::Failed { message } => set.no_op(i, format!("measurement failed ({message}); original kept")),
            Outcome::Present { .. } => set.no_op(i, "existence confirmed; nothing to change"),
            Outcome::NotPresent { object } => {
                let object = object_key(object);
                let sentences: Vec<usize> = if object == ETT_NAME {
                    ett_positives.iter().map(|s| s.sentence.index).collect()
                } else {
                    set.sentences
                        .iter()
                        .filter(|s| positive_mentions(report, s, lexicon, &object))
                        .map(|s| s.index)
                        .collect()
                };
                if sentences.is_empty() {
                    set.no_op(i, format!("'{object}' not found in image and not asserted by the report"));
                }
                for idx in sentences {
                    set.mark_removed(idx, i, &format!("'{object}' not present in the image"));
                }
            }
            Outcome::Scalar { value_cm } if is_ett_distance(result) => {
                if ett_positives.is_empty() {
                    return Err(UpdateError::Consistency {
                        result_index: i,
                        object: ETT_NAME.to_string(),
                    });
                }
                update_ett(&mut set, &ett_positives, *value_cm, g, i);
            }
            outcome @ (Outcome::Scalar { .. } | Outcome::Dims { .. }) => {
                let object = object_key(&result.query.subject);
                let mentioned = set
                    .sentences
                    .iter()
                    .any(|s| positive_mentions(report, s, lexicon, &object));
                if !mentioned {
                    return Err(UpdateError::Consistency {
                        result_index: i,
                        object,
                    });
                }
                let rendered = render_outcome(outcome).expect("measurement outcome");
                match choose_finding(&findings, result, &rendered, report) {
                    Some(f) => set.push(EditKind::Replace, f.char_span, rendered, "measurement replaced", i),
                    None => set.no_op(i, format!("report gives no value for '{object}'; original kept")),
                }
            }
        }
    }

    let (edits, no_ops) = set.finish();
    let text = apply_edits(report, &edits)?;
    Ok(UpdatedReport {
        text,
        edits,
        no_ops,
        results_used: results.to_vec(),
    })
}

/// Tip-to-carina distance from an annotation, using the singleton rule for
/// repeated boxes.
pub fn annotated_distance_cm(annotation: &FixtureAnnotation, study: &StudyRecord) -> Result<f64, UpdateError> {
    let pick = |name: &str| -> Result<CxrObject, UpdateError> {
        let objects: Vec<CxrObject> = annotation
            .boxes(name)
            .iter()
            .map(|b| CxrObject {
                object_name: name.to_string(),
                bbox: b.bbox,
                confidence: b.confidence,
            })
            .collect();
        select_singleton(&objects)
            .cloned()
            .ok_or_else(|| UpdateError::Annotation(format!("{}: no '{name}' annotation", annotation.study_id)))
    };
    let tip = pick(ETT_NAME)?;
    let carina = pick(CARINA_NAME)?;
    center_distance_cm(tip.center(), carina.center(), study.pixel_spacing)
        .map_err(|e| UpdateError::Annotation(e.to_string()))
}

/// Inserts the annotated tube distance into a ground-truth report that
/// mentions the tube without giving a value.
pub fn inject_ground_truth(
    gt_report: &str,
    annotation: &FixtureAnnotation,
    study: &StudyRecord,
    lexicon: &CategoryLexicon,
) -> Result<UpdatedReport, UpdateError> {
    let analysis = analyze_ett(gt_report, lexicon);
    let positives: Vec<&EttSentence> = analysis.ett_sentences.iter().filter(|s| s.positive).collect();
    if positives.is_empty() || positives.iter().any(|s| s.finding.is_some()) {
        return Ok(UpdatedReport::unchanged(gt_report));
    }
    let d = annotated_distance_cm(annotation, study)?;
    let s = positives[0].sentence;
    let sentence = measurement_sentence(d);
    let after = match s.text(gt_report).chars().last() {
        Some('.' | '!' | '?') => format!(" {sentence}"),
        _ => format!(". {sentence}"),
    };
    let edit = Edit {
        kind: EditKind::InsertSentence,
        sentence_index: s.index,
        span: (s.content_end, s.content_end),
        before: String::new(),
        after,
        reason: "annotated tube distance injected".into(),
        result_index: None,
    };
    let text = apply_edits(gt_report, std::slice::from_ref(&edit))?;
    Ok(UpdatedReport {
        text,
        edits: vec![edit],
        no_ops: Vec::new(),
        results_used: Vec::new(),
    })
}
