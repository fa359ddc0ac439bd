//! Endotracheal tube presence, measurement and placement.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{
    is_negated_at, sentence_findings, split_sentences, Category, CategoryLexicon, Direction,
    MeasuredFinding, Polarity, Sentence,
};
use crate::model::PlacementVerdict;

/// What a report says about the endotracheal tube.
///
/// `measurement_cm` is positive above the carina and negative below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EttObservation {
    pub present: bool,
    pub measurement_cm: Option<f64>,
    pub placement: Option<PlacementVerdict>,
}

impl EttObservation {
    pub const ABSENT: EttObservation = EttObservation {
        present: false,
        measurement_cm: None,
        placement: None,
    };
}

/// A placement phrase and the verdict it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementCue {
    pub start: usize,
    pub end: usize,
    pub verdict: PlacementVerdict,
}

/// Per-sentence view of the endotracheal tube, used by the updater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EttSentence {
    pub sentence: Sentence,
    /// At least one ETT mention outside a negated clause.
    pub positive: bool,
    /// A removal or extubation statement.
    pub removal: bool,
    pub finding: Option<MeasuredFinding>,
    pub cues: Vec<PlacementCue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EttAnalysis {
    pub sentences: Vec<Sentence>,
    /// Only sentences that mention the tube or extubation.
    pub ett_sentences: Vec<EttSentence>,
    pub observation: EttObservation,
}

impl EttAnalysis {
    pub fn mentions_ett(&self) -> bool {
        !self.ett_sentences.is_empty()
    }
}

static EXTUBATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bextubat(?:ed|ion)\b").expect("extubation regex"));

// Ordered by priority: a specific incorrect placement beats an unspecified
// one, which beats any "correct" wording in the same sentence.
static CUES: LazyLock<Vec<(PlacementVerdict, Regex)>> = LazyLock::new(|| {
    let table: &[(PlacementVerdict, &str)] = &[
        (
            PlacementVerdict::TooLow,
            r"(?i)\btoo\s+(?:low|deep)\b|\blow[- ]lying\b|\blow\s+position\b|\b(?:right|left)\s+main[- ]?stem\b|\bmainstem\b|\b(?:should\s+be\s+)?(?:withdrawn|retracted|pulled\s+back)\b|\bwithdraw(?:al)?\b",
        ),
        (
            PlacementVerdict::TooHigh,
            r"(?i)\btoo\s+high\b|\bhigh[- ]lying\b|\bhigh\s+position\b|\bsits\s+high\b|\b(?:should\s+be\s+)?advanced\b|\badvancement\b",
        ),
        (
            PlacementVerdict::IncorrectUnspecified,
            r"(?i)\bposition\s+is\s+incorrect\b|\bincorrect(?:ly)?\s+(?:position(?:ed)?|placed)\b|\bmalposition(?:ed)?\b|\bsuboptimal(?:ly)?\s+position(?:ed)?\b|\breposition(?:ed|ing)?\b|\bincorrect\b",
        ),
        (
            PlacementVerdict::Correct,
            r"(?i)\bposition\s+is\s+correct\b|\b(?:standard|appropriate|satisfactory|good|adequate|acceptable|expected|correct|optimal|unremarkable|proper|ideal)\s+position\b|\b(?:appropriately|well|satisfactorily|adequately|properly|correctly|optimally)\s+(?:positioned|placed|situated)\b|\bstable\b|\bunchanged\b|\bcorrect\b",
        ),
    ];
    table
        .iter()
        .map(|(v, p)| (*v, Regex::new(p).expect("cue regex")))
        .collect()
});

/// Placement phrases in `text[start..end]`, highest-priority verdict first.
pub fn placement_cues(text: &str, start: usize, end: usize) -> Vec<PlacementCue> {
    let slice = &text[start..end];
    let mut out = Vec::new();
    for (verdict, re) in CUES.iter() {
        for m in re.find_iter(slice) {
            let cue = PlacementCue {
                start: start + m.start(),
                end: start + m.end(),
                verdict: *verdict,
            };
            if !out.iter().any(|c: &PlacementCue| cue.start < c.end && c.start < cue.end) {
                out.push(cue);
            }
        }
    }
    out
}

pub fn analyze_ett(report: &str, lexicon: &CategoryLexicon) -> EttAnalysis {
    let sentences = split_sentences(report);
    let mut ett_sentences = Vec::new();
    let mut present = false;

    for sentence in &sentences {
        let (s, e) = (sentence.content_start, sentence.content_end);
        let mentions: Vec<_> = lexicon
            .find_mentions(report, s, e)
            .into_iter()
            .filter(|m| m.category == Category::EndotrachealTube)
            .collect();
        let extubation = EXTUBATION.is_match(&report[s..e]);
        if mentions.is_empty() && !extubation {
            continue;
        }
        let positive = mentions
            .iter()
            .any(|m| !is_negated_at(report, sentence, m.start));
        let removal = extubation || mentions.iter().any(|m| is_negated_at(report, sentence, m.start));
        // A later statement overrides an earlier one (removal then
        // re-intubation, or the reverse).
        if positive {
            present = true;
        } else if removal {
            present = false;
        }
        let finding = sentence_findings(report, sentence, lexicon)
            .into_iter()
            .find(|f| f.category == Category::EndotrachealTube && f.polarity == Polarity::Present);
        let cues = if positive { placement_cues(report, s, e) } else { Vec::new() };
        ett_sentences.push(EttSentence {
            sentence: *sentence,
            positive,
            removal,
            finding,
            cues,
        });
    }

    let observation = if present {
        let positives = || ett_sentences.iter().filter(|s| s.positive);
        let measurement_cm = positives().find_map(|s| s.finding.as_ref()).map(|f| {
            let v = f.values_cm[0];
            match f.direction {
                Some(Direction::Below) => -v,
                _ => v,
            }
        });
        let placement = positives().find_map(|s| s.cues.first()).map(|c| c.verdict);
        EttObservation {
            present: true,
            measurement_cm,
            placement,
        }
    } else {
        EttObservation::ABSENT
    };

    EttAnalysis {
        sentences,
        ett_sentences,
        observation,
    }
}

pub fn extract_ett(report: &str) -> EttObservation {
    extract_ett_with(report, &CategoryLexicon::default())
}

pub fn extract_ett_with(report: &str, lexicon: &CategoryLexicon) -> EttObservation {
    analyze_ett(report, lexicon).observation
}
