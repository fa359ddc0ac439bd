//! Keyword gating and sentence segmentation.

use serde::{Deserialize, Serialize};

/// Tokens that mark a report as carrying concrete measurements.
pub const DEFAULT_KEYWORDS: &[&str] = &[
    "cm",
    "mm",
    "centimeter",
    "centimeters",
    "millimeter",
    "millimeters",
    "measure",
    "measures",
];

/// Maximal runs of ASCII letters, lowercased. Digits and punctuation split
/// tokens, so "4.3cm" yields "cm".
pub fn letter_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

pub fn has_measurement_keywords(report: &str) -> bool {
    has_keywords(report, DEFAULT_KEYWORDS)
}

/// True iff any keyword occurs as a whole token, ignoring case.
pub fn has_keywords<S: AsRef<str>>(report: &str, keywords: &[S]) -> bool {
    letter_tokens(report).any(|tok| keywords.iter().any(|k| k.as_ref().eq_ignore_ascii_case(&tok)))
}

/// One sentence of a report.
///
/// `start..end` is the raw span, which includes trailing whitespace so that
/// consecutive sentences tile the text exactly. `content_start..content_end`
/// excludes surrounding whitespace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub content_start: usize,
    pub content_end: usize,
}

impl Sentence {
    pub fn raw<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }

    pub fn text<'a>(&self, text: &'a str) -> &'a str {
        &text[self.content_start..self.content_end]
    }

    pub fn contains_span(&self, start: usize, end: usize) -> bool {
        start >= self.start && end <= self.end
    }
}

const ABBREVIATIONS: &[&str] = &["approx", "dr", "vs", "e.g", "i.e", "mr", "mrs", "st"];

fn is_abbreviation(text: &str, dot: usize) -> bool {
    let before = &text[..dot];
    let word_start = before
        .rfind(|c: char| c.is_whitespace() || c == '(')
        .map_or(0, |i| i + 1);
    let word = before[word_start..].to_ascii_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

/// "2. 0 cm" is a decimal with a stray space, not a sentence boundary.
fn is_spaced_decimal(bytes: &[u8], dot: usize) -> bool {
    let prev_digit = dot > 0 && bytes[dot - 1].is_ascii_digit();
    let next_digit =
        dot + 2 < bytes.len() && bytes[dot + 1] == b' ' && bytes[dot + 2].is_ascii_digit();
    prev_digit && next_digit
}

/// Splits a report into sentences.
///
/// Boundaries are `.`, `!` or `?` followed by whitespace or end of text, and
/// blank lines. Decimal points, spaced decimals and a few abbreviations do
/// not split.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let bytes = text.as_bytes();
    let mut cuts: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let boundary = match b {
            b'.' | b'!' | b'?' => {
                let at_end = i + 1 == bytes.len();
                let ws_next = !at_end && bytes[i + 1].is_ascii_whitespace();
                (at_end || ws_next)
                    && !(b == b'.' && (is_spaced_decimal(bytes, i) || is_abbreviation(text, i)))
            }
            b'\n' => {
                // blank line
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t' || bytes[j] == b'\r') {
                    j += 1;
                }
                j < bytes.len() && bytes[j] == b'\n'
            }
            _ => false,
        };
        if boundary {
            // Absorb trailing whitespace into this sentence.
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            if j < bytes.len() {
                cuts.push(j);
            }
            i = j;
        } else {
            i += 1;
        }
    }

    let mut sentences = Vec::new();
    let mut start = 0;
    for end in cuts.into_iter().chain(std::iter::once(text.len())) {
        if end <= start {
            continue;
        }
        let raw = &text[start..end];
        let lead = raw.len() - raw.trim_start().len();
        let trail = raw.len() - raw.trim_end().len();
        if raw.trim().is_empty() {
            // whitespace-only tail folds into the previous sentence
            if let Some(last) = sentences.last_mut() {
                let last: &mut Sentence = last;
                last.end = end;
            } else {
                sentences.push(Sentence {
                    index: 0,
                    start,
                    end,
                    content_start: start,
                    content_end: start,
                });
            }
        } else {
            sentences.push(Sentence {
                index: sentences.len(),
                start,
                end,
                content_start: start + lead,
                content_end: end - trail,
            });
        }
        start = end;
    }
    sentences
}
