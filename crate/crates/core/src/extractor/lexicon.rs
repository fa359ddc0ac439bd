//! Category lexicon: which phrases name measurable objects.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExtractionError;

/// Canonical name used for every endotracheal-tube synonym.
pub const ETT_NAME: &str = "endotracheal tube";
pub const CARINA_NAME: &str = "carina";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    EndotrachealTube,
    OtherTubeCatheter,
    Lesion,
    Pneumothorax,
    Other,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::EndotrachealTube => "endotracheal_tube",
            Category::OtherTubeCatheter => "other_tube_catheter",
            Category::Lesion => "lesion",
            Category::Pneumothorax => "pneumothorax",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "endotrachealtube" | "ett" => Ok(Category::EndotrachealTube),
            "othertubecatheter" | "othertubescatheters" | "othertube" => {
                Ok(Category::OtherTubeCatheter)
            }
            "lesion" => Ok(Category::Lesion),
            "pneumothorax" => Ok(Category::Pneumothorax),
            "other" | "others" => Ok(Category::Other),
            _ => Err(format!("unknown category '{s}'")),
        }
    }
}

const SEED: &[(Category, &str)] = &[
    (Category::EndotrachealTube, "endotracheal tube"),
    (Category::EndotrachealTube, "endotracheal"),
    (Category::EndotrachealTube, "et tube"),
    (Category::EndotrachealTube, "ett"),
    (Category::EndotrachealTube, "ett tube"),
    (Category::EndotrachealTube, "et-tube"),
    (Category::EndotrachealTube, "endotracheal tube tip"),
    (Category::OtherTubeCatheter, "tracheostomy tube"),
    (Category::OtherTubeCatheter, "picc"),
    (Category::OtherTubeCatheter, "picc line"),
    (Category::OtherTubeCatheter, "central venous line"),
    (Category::OtherTubeCatheter, "central venous catheter"),
    (Category::OtherTubeCatheter, "central line"),
    (Category::OtherTubeCatheter, "internal jugular vein catheter"),
    (Category::OtherTubeCatheter, "internal jugular catheter"),
    (Category::OtherTubeCatheter, "internal jugular line"),
    (Category::OtherTubeCatheter, "nasogastric tube"),
    (Category::OtherTubeCatheter, "orogastric tube"),
    (Category::OtherTubeCatheter, "enteric tube"),
    (Category::OtherTubeCatheter, "feeding tube"),
    (Category::OtherTubeCatheter, "ng tube"),
    (Category::OtherTubeCatheter, "og tube"),
    (Category::OtherTubeCatheter, "chest tube"),
    (Category::OtherTubeCatheter, "swan-ganz catheter"),
    (Category::OtherTubeCatheter, "pulmonary artery catheter"),
    (Category::Lesion, "opacity"),
    (Category::Lesion, "opacities"),
    (Category::Lesion, "mass"),
    (Category::Lesion, "nodule"),
    (Category::Lesion, "lesion"),
    (Category::Lesion, "consolidation"),
    (Category::Pneumothorax, "pneumothorax"),
    (Category::Pneumothorax, "pneumothoraces"),
    (Category::Other, "calcification"),
    (Category::Other, "balloon pump"),
    (Category::Other, "intra-aortic balloon pump"),
    (Category::Other, "effusion"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub category: Category,
    /// Lowercased match phrase.
    pub phrase: String,
}

/// Configurable phrase list per category.
///
/// Matching is case-insensitive at word boundaries; at each position the
/// longest phrase wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLexicon {
    entries: Vec<LexiconEntry>,
}

impl Default for CategoryLexicon {
    fn default() -> Self {
        Self::from_entries(SEED.iter().map(|(c, p)| (*c, p.to_string())))
    }
}

/// A lexicon phrase located in report text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub category: Category,
    /// Name the pipeline uses for this object.
    pub object_name: String,
}

impl CategoryLexicon {
    pub fn from_entries(entries: impl IntoIterator<Item = (Category, String)>) -> Self {
        let mut out: Vec<LexiconEntry> = Vec::new();
        for (category, phrase) in entries {
            let phrase = phrase.trim().to_ascii_lowercase();
            if phrase.is_empty() || out.iter().any(|e| e.phrase == phrase) {
                continue;
            }
            out.push(LexiconEntry { category, phrase });
        }
        Self { entries: out }
    }

    /// Parses `category<TAB>phrase` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self, ExtractionError> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line_no = no + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (cat, phrase) = line.split_once('\t').ok_or_else(|| ExtractionError::Lexicon {
                line: line_no,
                message: "expected category<TAB>phrase".into(),
            })?;
            let category = cat.parse::<Category>().map_err(|message| ExtractionError::Lexicon {
                line: line_no,
                message,
            })?;
            if phrase.trim().is_empty() || phrase.contains('\t') {
                return Err(ExtractionError::Lexicon {
                    line: line_no,
                    message: "phrase must be a single non-empty field".into(),
                });
            }
            entries.push((category, phrase.to_string()));
        }
        Ok(Self::from_entries(entries))
    }

    pub fn load(path: &Path) -> Result<Self, ExtractionError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExtractionError::Lexicon {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn phrases(&self, category: Category) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.category == category)
            .map(|e| e.phrase.as_str())
    }

    /// Canonical object name for a phrase of a category.
    pub fn canonical_name(category: Category, phrase: &str) -> String {
        match category {
            Category::EndotrachealTube => ETT_NAME.to_string(),
            _ => phrase.to_string(),
        }
    }

    /// Canonical name for a free-form object name, if it is a lexicon phrase.
    pub fn canonicalize(&self, name: &str) -> Option<(Category, String)> {
        let lower = name.trim().to_ascii_lowercase();
        self.entries
            .iter()
            .find(|e| e.phrase == lower)
            .map(|e| (e.category, Self::canonical_name(e.category, &e.phrase)))
    }

    /// Non-overlapping mentions within `text[range]`, offsets absolute.
    pub fn find_mentions(&self, text: &str, start: usize, end: usize) -> Vec<Mention> {
        let lower = text[start..end].to_ascii_lowercase();
        let bytes = lower.as_bytes();
        let is_word = |b: u8| b.is_ascii_alphanumeric();
        let mut candidates: Vec<(usize, usize, &LexiconEntry)> = Vec::new();
        for entry in &self.entries {
            let phrase = entry.phrase.as_str();
            let mut from = 0;
            while let Some(pos) = lower[from..].find(phrase) {
                let s = from + pos;
                let mut e = s + phrase.len();
                from = s + phrase.len();
                if s > 0 && is_word(bytes[s - 1]) {
                    continue;
                }
                // simple plural
                let boundary_at = |i: usize| i == bytes.len() || !is_word(bytes[i]);
                if lower[e..].starts_with('s') && boundary_at(e + 1) {
                    e += 1;
                } else if lower[e..].starts_with("es") && boundary_at(e + 2) {
                    e += 2;
                }
                if e < bytes.len() && is_word(bytes[e]) {
                    continue;
                }
                candidates.push((s, e, entry));
            }
        }
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then((b.1 - b.0).cmp(&(a.1 - a.0))));
        let mut out: Vec<Mention> = Vec::new();
        let mut last_end = 0usize;
        for (s, e, entry) in candidates {
            if !out.is_empty() && s < last_end {
                continue;
            }
            last_end = e;
            out.push(Mention {
                start: start + s,
                end: start + e,
                category: entry.category,
                object_name: Self::canonical_name(entry.category, &entry.phrase),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_phrase_wins() {
        let lex = CategoryLexicon::default();
        let t = "The endotracheal tube tip and the PICC line are seen.";
        let m = lex.find_mentions(t, 0, t.len());
        assert_eq!(m.len(), 2);
        assert_eq!(&t[m[0].start..m[0].end], "endotracheal tube tip");
        assert_eq!(m[0].object_name, ETT_NAME);
        assert_eq!(&t[m[1].start..m[1].end], "PICC line");
        assert_eq!(m[1].object_name, "picc line");
    }

    #[test]
    fn word_boundaries_and_plurals() {
        let lex = CategoryLexicon::default();
        let t = "Masses and nodules; settle the massive ettx.";
        let names: Vec<String> = lex
            .find_mentions(t, 0, t.len())
            .into_iter()
            .map(|m| m.object_name)
            .collect();
        assert_eq!(names, vec!["mass", "nodule"]);
    }

    #[test]
    fn parse_config_file() {
        let lex = CategoryLexicon::parse("# comment\nlesion\tGranuloma\n\nother\tpacer lead\n").unwrap();
        assert_eq!(lex.entries().len(), 2);
        assert_eq!(lex.entries()[0].phrase, "granuloma");
        assert_eq!(lex.entries()[1].category, Category::Other);
        let err = CategoryLexicon::parse("lesion\tnodule\nbogus\tthing\n").unwrap_err();
        assert!(matches!(err, ExtractionError::Lexicon { line: 2, .. }));
        assert!(CategoryLexicon::parse("lesion nodule").is_err());
    }

    #[test]
    fn category_names() {
        assert_eq!("Endotracheal tube".parse::<Category>(), Ok(Category::EndotrachealTube));
        assert_eq!("other_tube_catheter".parse::<Category>(), Ok(Category::OtherTubeCatheter));
        assert!("tube".parse::<Category>().is_err());
    }
}
