//! Measurement phrases and their normalisation to centimetres.

use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::ExtractionError;

const NUM: &str = r"(?:\d+(?:\.\s?\d+)?|\.\d+)";
const UNIT: &str = r"(?:cm|mm|centimet(?:er|re)s?|millimet(?:er|re)s?)\b";

static MEASUREMENT: LazyLock<Regex> = LazyLock::new(|| {
    let pattern = format!(
        r"(?ix)
        (?P<dims>
            \b(?P<d1>{NUM})\s*(?P<u1>{UNIT})?\s*(?:x|×|by)\s*(?P<d2>{NUM})(?:\s*(?P<u2>{UNIT}))?
            (?:\s*(?:x|×|by)\s*(?P<d3>{NUM}))?(?:\s*(?P<du>{UNIT}))?
        )
        |
        (?P<range>
            \b(?P<r1>{NUM})\s*(?P<ru1>{UNIT})?\s*(?:-|–|to)\s*(?P<r2>{NUM})\s*(?P<ru>{UNIT})
        )
        |
        (?P<single>
            (?P<lt>less\s+than\s+)?\b(?P<v>{NUM})\s*-?\s*(?P<u>{UNIT})
        )"
    );
    Regex::new(&pattern).expect("measurement regex compiles")
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementForm {
    Scalar,
    Range,
    LessThan,
    Dimensions,
}

/// A measurement phrase found in text, with values already in cm.
///
/// Dimension values are ordered major first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMatch {
    pub start: usize,
    pub end: usize,
    pub form: MeasurementForm,
    pub values_cm: Vec<f64>,
}

impl ValueMatch {
    pub fn primary(&self) -> f64 {
        self.values_cm[0]
    }
}

fn parse_number(raw: &str) -> Result<f64, ExtractionError> {
    let compact: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
    compact
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ExtractionError::Unparseable(raw.to_string()))
}

fn unit_factor(unit: &str) -> f64 {
    if unit.to_ascii_lowercase().starts_with('m') {
        0.1
    } else {
        1.0
    }
}

fn to_cm(number: &str, unit: Option<&str>, fallback_unit: &str) -> Result<f64, ExtractionError> {
    let v = parse_number(number)?;
    Ok(v * unit_factor(unit.unwrap_or(fallback_unit)))
}

fn from_captures(caps: &Captures<'_>) -> Result<ValueMatch, ExtractionError> {
    let whole = caps.get(0).expect("group 0");
    let get = |name: &str| caps.name(name).map(|m| m.as_str());
    let (form, values_cm) = if caps.name("dims").is_some() {
        let fallback = get("du").or(get("u2")).or(get("u1"));
        let Some(fallback) = fallback else {
            return Err(ExtractionError::Unparseable(whole.as_str().to_string()));
        };
        let mut values = vec![
            to_cm(get("d1").unwrap(), get("u1"), fallback)?,
            to_cm(get("d2").unwrap(), get("u2"), fallback)?,
        ];
        if let Some(d3) = get("d3") {
            values.push(to_cm(d3, None, fallback)?);
        }
        values.sort_by(|a, b| b.total_cmp(a));
        values.truncate(2);
        (MeasurementForm::Dimensions, values)
    } else if caps.name("range").is_some() {
        let unit = get("ru").unwrap();
        // the higher bound is reported
        let a = to_cm(get("r1").unwrap(), get("ru1"), unit)?;
        let b = to_cm(get("r2").unwrap(), Some(unit), unit)?;
        (MeasurementForm::Range, vec![a.max(b)])
    } else {
        let form = if caps.name("lt").is_some() {
            MeasurementForm::LessThan
        } else {
            MeasurementForm::Scalar
        };
        (form, vec![to_cm(get("v").unwrap(), get("u"), "cm")?])
    };
    Ok(ValueMatch {
        start: whole.start(),
        end: whole.end(),
        form,
        values_cm,
    })
}

/// All measurement phrases within `text[start..end]`, offsets absolute.
/// Phrases that cannot be parsed are skipped.
pub fn find_values(text: &str, start: usize, end: usize) -> Vec<ValueMatch> {
    MEASUREMENT
        .captures_iter(&text[start..end])
        .filter_map(|caps| from_captures(&caps).ok())
        .map(|mut m| {
            m.start += start;
            m.end += start;
            m
        })
        .collect()
}

/// Parses one measurement phrase and returns its value in cm.
///
/// Spaced decimals are repaired, ranges resolve to the upper bound, "less
/// than x" resolves to x and millimetres are divided by ten. For a
/// dimensions phrase the major axis is returned.
pub fn normalize_value(phrase: &str) -> Result<f64, ExtractionError> {
    parse_measurement(phrase).map(|m| m.primary())
}

/// Parses the first measurement in `phrase`.
pub fn parse_measurement(phrase: &str) -> Result<ValueMatch, ExtractionError> {
    let caps = MEASUREMENT
        .captures(phrase)
        .ok_or_else(|| ExtractionError::Unparseable(phrase.to_string()))?;
    from_captures(&caps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalisation_rules() {
        assert_eq!(normalize_value("less than 2 cm").unwrap(), 2.0);
        assert_eq!(normalize_value("3-4 cm").unwrap(), 4.0);
        assert_eq!(normalize_value("11 mm").unwrap(), 1.1);
        assert_eq!(normalize_value("2. 0 cm").unwrap(), 2.0);
        assert_eq!(normalize_value("4.3 cm").unwrap(), 4.3);
        assert_eq!(normalize_value("4 to 5 centimeters").unwrap(), 5.0);
        assert_eq!(normalize_value("5 millimeters").unwrap(), 0.5);
        assert_eq!(normalize_value("4-cm").unwrap(), 4.0);
    }

    #[test]
    fn unparseable() {
        assert!(matches!(normalize_value("about two cm"), Err(ExtractionError::Unparseable(_))));
        assert!(normalize_value("").is_err());
        assert!(normalize_value("T2 region").is_err());
    }

    #[test]
    fn dimensions() {
        let m = parse_measurement("measuring 1.3 x 1.4 cm").unwrap();
        assert_eq!(m.form, MeasurementForm::Dimensions);
        assert_eq!(m.values_cm, vec![1.4, 1.3]);
        let m = parse_measurement("about 6 cm x 3 cm").unwrap();
        assert_eq!(m.values_cm, vec![6.0, 3.0]);
        let m = parse_measurement("13 x 9 x 11 mm").unwrap();
        assert_eq!(m.values_cm, vec![1.3, 1.1]);
        let m = parse_measurement("2 cm x 15 mm").unwrap();
        assert_eq!(m.values_cm, vec![2.0, 1.5]);
    }

    #[test]
    fn spans_are_absolute() {
        let t = "Tip is 4.3 cm above; mass 2 x 3 cm.";
        let v = find_values(t, 5, t.len());
        assert_eq!(v.len(), 2);
        assert_eq!(&t[v[0].start..v[0].end], "4.3 cm");
        assert_eq!(&t[v[1].start..v[1].end], "2 x 3 cm");
    }

    #[test]
    fn less_than_is_in_span() {
        let t = "tube less than 2 cm above the carina";
        let v = find_values(t, 0, t.len());
        assert_eq!(&t[v[0].start..v[0].end], "less than 2 cm");
        assert_eq!(v[0].form, MeasurementForm::LessThan);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn idempotent_on_normalized(tenths in 0u32..500) {
                let v = tenths as f64 / 10.0;
                let rendered = format!("{v:.1} cm");
                let once = normalize_value(&rendered).unwrap();
                prop_assert_eq!(once, v);
                prop_assert_eq!(normalize_value(&format!("{once:.1} cm")).unwrap(), once);
            }
        }
    }
}
