//! Rule-based extraction of measured findings from report text.
//!
//! A finding is an object named by the [`CategoryLexicon`] together with the
//! first concrete measurement (cm or mm) that follows it in the same sentence.
//! Objects described only qualitatively, or by anatomical landmark, produce
//! nothing.

mod ett;
mod lexicon;
mod text;
mod values;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ett::{
    analyze_ett, extract_ett, extract_ett_with, placement_cues, EttAnalysis, EttObservation,
    EttSentence, PlacementCue,
};
pub use lexicon::{Category, CategoryLexicon, LexiconEntry, Mention, CARINA_NAME, ETT_NAME};
pub use text::{has_keywords, has_measurement_keywords, split_sentences, Sentence, DEFAULT_KEYWORDS};
pub use values::{find_values, normalize_value, parse_measurement, MeasurementForm, ValueMatch};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractionError {
    #[error("cannot parse measurement '{0}'")]
    Unparseable(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Present,
    Absent,
}

/// Which side of the reference landmark a measurement is stated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredFinding {
    pub object_name: String,
    pub category: Category,
    /// One value for scalars, `(major, minor)` for dimensions.
    pub values_cm: Vec<f64>,
    pub form: MeasurementForm,
    pub sentence_index: usize,
    /// Byte span of the measurement phrase in the report.
    pub char_span: (usize, usize),
    /// Byte span of the object mention in the report.
    pub mention_span: (usize, usize),
    pub polarity: Polarity,
    /// Anatomical region qualifying the object, e.g. "right upper lung".
    pub region: Option<String>,
    /// Landmark the measurement is taken from, e.g. "carina".
    pub reference: Option<String>,
    pub direction: Option<Direction>,
    /// Audit flag: the sentence names more than one object, so attachment
    /// relied on proximity.
    pub multi_object: bool,
}

const RELATIONAL_WORDS: &[&str] = &[
    "above", "below", "from", "to", "of", "in", "the", "at", "proximal", "distal", "beyond", "into",
    "within", "with", "and", "or", "is", "are", "was", "superior", "inferior", "near", "by",
];

/// True when `gap` (the text between a value and a following mention) is at
/// most two modifier words, as in "a 2 cm spiculated nodule".
fn is_prenominal_gap(gap: &str) -> bool {
    if !gap.starts_with(char::is_whitespace) {
        return false;
    }
    let words: Vec<&str> = gap.split_whitespace().collect();
    words.len() <= 2
        && words.iter().all(|w| {
            w.chars().all(|c| c.is_ascii_alphabetic() || c == '-')
                && !RELATIONAL_WORDS.iter().any(|r| r.eq_ignore_ascii_case(w))
        })
}

static NEGATION_CUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(no|without|removed|removal|extubated|extubation|resolved)\b")
        .expect("cue regex")
});

static NEGATION_EXCEPTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:no|without)\s+(?:\w+\s+){0,2}?(?:change|changes|changed)\b")
        .expect("exception regex")
});

static CLAUSE_BREAK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)[,;:]|\s-\s|\bbut\b|\bhowever\b|\band\s+(?:there|the)\b").expect("clause regex")
});

const REGION_WORDS: &[&str] = &[
    "right", "left", "upper", "lower", "middle", "mid", "central", "apical", "basal", "basilar",
    "bibasilar", "perihilar", "retrocardiac", "lingular", "hilar", "bilateral",
];
const REGION_NOUNS: &[&str] = &["lung", "lobe", "zone", "base", "apex", "hemithorax"];

static FOLLOWING_REGION: LazyLock<Regex> = LazyLock::new(|| {
    let words = REGION_WORDS.join("|");
    let nouns = REGION_NOUNS.join("|");
    Regex::new(&format!(
        r"(?i)^\s+(?:in|within|at|of)\s+the\s+((?:(?:{words})\s+)+(?:{nouns})s?)\b"
    ))
    .expect("region regex")
});

const LANDMARKS: &[&str] = &[
    "carina",
    "cavoatrial junction",
    "gastroesophageal junction",
    "ge junction",
    "aortic arch",
    "thoracic inlet",
    "clavicular heads",
    "clavicles",
    "diaphragm",
];

static REFERENCE: LazyLock<Regex> = LazyLock::new(|| {
    let marks = LANDMARKS.join("|");
    Regex::new(&format!(
        r"(?i)^\s*(?:\w+\s+){{0,2}}?(?P<dir>above|below|from|proximal\s+to|distal\s+to|beyond|superior\s+to|inferior\s+to)\s+(?:the\s+)?(?:\w+\s+of\s+the\s+)?(?P<mark>{marks})\b"
    ))
    .expect("reference regex")
});

/// Byte ranges of the clauses of `text[start..end]`, absolute.
pub(crate) fn clauses(text: &str, start: usize, end: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut from = start;
    for m in CLAUSE_BREAK.find_iter(&text[start..end]) {
        let cut = start + m.start();
        if cut > from {
            out.push((from, cut));
        }
        from = start + m.end();
    }
    if from < end {
        out.push((from, end));
    }
    out
}

/// True when the clause containing `pos` carries a negation cue.
pub(crate) fn is_negated_at(text: &str, sentence: &Sentence, pos: usize) -> bool {
    let Some((cs, ce)) = clauses(text, sentence.content_start, sentence.content_end)
        .into_iter()
        .find(|&(s, e)| pos >= s && pos < e)
    else {
        return false;
    };
    let clause = &text[cs..ce];
    let excepted: Vec<(usize, usize)> = NEGATION_EXCEPTION
        .find_iter(clause)
        .map(|m| (m.start(), m.end()))
        .collect();
    NEGATION_CUE
        .find_iter(clause)
        .any(|m| !excepted.iter().any(|&(s, e)| m.start() >= s && m.end() <= e))
}

fn region_before(text: &str, sentence_start: usize, mention_start: usize) -> Option<String> {
    let before = &text[sentence_start..mention_start];
    let mut words: Vec<&str> = Vec::new();
    for tok in before.split_whitespace().rev() {
        let clean = tok.trim_matches(|c: char| !c.is_alphanumeric());
        if clean.len() != tok.len() && !words.is_empty() {
            break;
        }
        if REGION_WORDS.iter().any(|w| w.eq_ignore_ascii_case(clean)) {
            words.push(clean);
        } else {
            break;
        }
    }
    if words.is_empty() {
        return None;
    }
    words.reverse();
    Some(words.join(" ").to_ascii_lowercase())
}

fn region_after(text: &str, mention_end: usize, limit: usize) -> Option<String> {
    let after = &text[mention_end..limit];
    FOLLOWING_REGION
        .captures(after)
        .map(|c| c[1].split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase())
}

fn reference_after(text: &str, value_end: usize, limit: usize) -> (Option<String>, Option<Direction>) {
    let after = &text[value_end..limit];
    let Some(c) = REFERENCE.captures(after) else {
        return (None, None);
    };
    let dir = c["dir"].to_ascii_lowercase();
    let direction = if dir == "above" || dir.starts_with("proximal") || dir.starts_with("superior") {
        Some(Direction::Above)
    } else if dir == "below" || dir.starts_with("distal") || dir == "beyond" || dir.starts_with("inferior") {
        Some(Direction::Below)
    } else {
        None
    };
    let mark = c["mark"].split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase();
    (Some(mark), direction)
}

/// Findings for one sentence.
pub(crate) fn sentence_findings(
    report: &str,
    sentence: &Sentence,
    lexicon: &CategoryLexicon,
) -> Vec<MeasuredFinding> {
    let (s, e) = (sentence.content_start, sentence.content_end);
    let mentions = lexicon.find_mentions(report, s, e);
    if mentions.is_empty() {
        return Vec::new();
    }
    let values = find_values(report, s, e);
    let mut distinct: Vec<&str> = mentions.iter().map(|m| m.object_name.as_str()).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let multi_object = distinct.len() > 1;

    let mut out: Vec<MeasuredFinding> = Vec::new();
    for value in values {
        // "a 2 cm nodule": a value directly modifying the next noun phrase
        let following = mentions.iter().find(|m| {
            m.start >= value.end && is_prenominal_gap(&report[value.end..m.start])
        });
        let preceding = mentions.iter().rev().find(|m| m.end <= value.start);
        let Some(mention) = following.or(preceding) else {
            continue;
        };
        if out.iter().any(|f| f.object_name == mention.object_name) {
            continue;
        }
        let region = region_before(report, s, mention.start)
            .or_else(|| region_after(report, mention.end, if mention.end <= value.start { value.start } else { e }));
        let (mut reference, direction) = reference_after(report, value.end, e);
        if mention.category == Category::EndotrachealTube && reference.is_none() {
            reference = Some(CARINA_NAME.to_string());
        }
        let polarity = if is_negated_at(report, sentence, mention.start) {
            Polarity::Absent
        } else {
            Polarity::Present
        };
        out.push(MeasuredFinding {
            object_name: mention.object_name.clone(),
            category: mention.category,
            values_cm: value.values_cm.clone(),
            form: value.form,
            sentence_index: sentence.index,
            char_span: (value.start, value.end),
            mention_span: (mention.start, mention.end),
            polarity,
            region,
            reference,
            direction,
            multi_object,
        });
    }
    out
}

/// Lists every object carrying a concrete measurement, in report order.
pub fn extract_measured_findings(report: &str, lexicon: &CategoryLexicon) -> Vec<MeasuredFinding> {
    split_sentences(report)
        .iter()
        .flat_map(|s| sentence_findings(report, s, lexicon))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(fs: &[MeasuredFinding]) -> Vec<&str> {
        fs.iter().map(|f| f.object_name.as_str()).collect()
    }

    #[test]
    fn tracheostomy_only() {
        let r = "The tracheostomy tube ends 3.5 cm from the carina. There is a small apical right \
                 pneumothorax. Heart size is normal-the endotracheal tube projects into the T2 region.";
        let fs = extract_measured_findings(r, &CategoryLexicon::default());
        assert_eq!(names(&fs), vec!["tracheostomy tube"]);
        assert_eq!(fs[0].values_cm, vec![3.5]);
        assert_eq!(fs[0].reference.as_deref(), Some("carina"));
        assert_eq!(fs[0].category, Category::OtherTubeCatheter);
    }

    #[test]
    fn nodule_and_ett() {
        let r = "Ill-defined nodule in the right upper lung measuring 1.3 x 1.4 cm. The endotracheal tube \
                 tip now measures approximately 4.6 cm above the carina-the tip of the right internal \
                 jugular vein catheter projects over the cavoatrial junction.";
        let fs = extract_measured_findings(r, &CategoryLexicon::default());
        assert_eq!(names(&fs), vec!["nodule", "endotracheal tube"]);
        assert_eq!(fs[0].values_cm, vec![1.4, 1.3]);
        assert_eq!(fs[0].region.as_deref(), Some("right upper lung"));
        assert_eq!(fs[1].values_cm, vec![4.6]);
        assert_eq!(fs[1].direction, Some(Direction::Above));
        assert!(fs[1].multi_object);
    }

    #[test]
    fn negative_examples() {
        let lex = CategoryLexicon::default();
        assert!(extract_measured_findings("No pneumothorax.", &lex).is_empty());
        assert!(extract_measured_findings("The patient has been extubated.", &lex).is_empty());
        assert!(extract_measured_findings("", &lex).is_empty());
    }

    #[test]
    fn table_sentences() {
        let lex = CategoryLexicon::default();
        let cases: &[(&str, &str, Category, f64)] = &[
            ("Endotracheal tube tip measures approximately 4.3 cm above the carina.", "endotracheal tube", Category::EndotrachealTube, 4.3),
            ("The lesion is larger since the prior examination where it measured 11 mm.", "lesion", Category::Lesion, 1.1),
            ("A right PICC has its tip terminating in the proximal right atrium, which should be retracted 2 cm.", "picc", Category::OtherTubeCatheter, 2.0),
            ("Moderate right apical pneumothorax measuring 2.3 cm at the apex.", "pneumothorax", Category::Pneumothorax, 2.3),
            ("The balloon pump lies 2.3 cm from the apex of the aortic arch.", "balloon pump", Category::Other, 2.3),
        ];
        for (text, name, cat, v) in cases {
            let fs = extract_measured_findings(text, &lex);
            assert_eq!(fs.len(), 1, "{text}");
            assert_eq!(fs[0].object_name, *name);
            assert_eq!(fs[0].category, *cat);
            assert_eq!(fs[0].values_cm, vec![*v]);
            assert_eq!(fs[0].polarity, Polarity::Present);
        }
        let pneumo = &extract_measured_findings(cases[3].0, &lex)[0];
        assert_eq!(pneumo.region.as_deref(), Some("right apical"));
        let pump = &extract_measured_findings(cases[4].0, &lex)[0];
        assert_eq!(pump.reference.as_deref(), Some("aortic arch"));
    }

    #[test]
    fn opacity_region_and_dims() {
        let r = "The endotracheal tube terminates 2.3 cm above the carina. There is a new dense right \
                 central opacity measuring about 6 cm x 3 cm.";
        let fs = extract_measured_findings(r, &CategoryLexicon::default());
        assert_eq!(names(&fs), vec!["endotracheal tube", "opacity"]);
        assert_eq!(fs[1].values_cm, vec![6.0, 3.0]);
        assert_eq!(fs[1].region.as_deref(), Some("right central"));
    }

    #[test]
    fn first_value_wins_per_object() {
        let r = "ETT tip 3 cm above the carina, previously 5 cm.";
        let fs = extract_measured_findings(r, &CategoryLexicon::default());
        assert_eq!(fs.len(), 1);
        assert_eq!(fs[0].values_cm, vec![3.0]);
    }

    #[test]
    fn negation_is_clause_scoped() {
        let lex = CategoryLexicon::default();
        let fs = extract_measured_findings("Endotracheal tube 4 cm above the carina, no pneumothorax.", &lex);
        assert_eq!(fs[0].polarity, Polarity::Present);
        let fs = extract_measured_findings("The ET tube, previously 4 cm above the carina, has been removed.", &lex);
        assert_eq!(fs.len(), 1);
        // the value sits in the mention's clause only through the comma split
        let fs2 = extract_measured_findings("ET tube removed, was 4 cm above the carina.", &lex);
        assert_eq!(fs2[0].polarity, Polarity::Absent);
        let fs3 = extract_measured_findings("ET tube 4 cm above the carina with no change.", &lex);
        assert_eq!(fs3[0].polarity, Polarity::Present);
    }

    #[test]
    fn below_direction() {
        let fs = extract_measured_findings("The ETT tip is 1 cm below the carina.", &CategoryLexicon::default());
        assert_eq!(fs[0].direction, Some(Direction::Below));
    }

    #[test]
    fn spans_within_sentence() {
        let r = "Lungs clear. Nodule measures 8 mm. ETT is 5 cm above the carina.";
        let sentences = split_sentences(r);
        for f in extract_measured_findings(r, &CategoryLexicon::default()) {
            let s = &sentences[f.sentence_index];
            assert!(s.contains_span(f.char_span.0, f.char_span.1));
            assert!(s.contains_span(f.mention_span.0, f.mention_span.1));
        }
    }
}
