//! Measurement queries derived from extracted findings.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::{Category, EttObservation, MeasuredFinding, Polarity, CARINA_NAME, ETT_NAME};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("distance queries need a reference object")]
    MissingReference,
    #[error("only distance queries take a reference object")]
    UnexpectedReference,
    #[error("object names must be non-empty")]
    EmptyName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    DistanceBetween,
    DiameterOf,
    DimensionsOf,
    WidthOf,
    HeightOf,
    ExistenceOf,
}

/// Where in the report a query came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingRef {
    pub sentence_index: usize,
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementQuery {
    pub kind: QueryKind,
    pub subject: String,
    pub reference: Option<String>,
    pub region: Option<String>,
    pub source_finding: Option<FindingRef>,
}

impl MeasurementQuery {
    pub fn new(
        kind: QueryKind,
        subject: impl Into<String>,
        reference: Option<String>,
        region: Option<String>,
    ) -> Result<Self, QueryError> {
        let query = Self {
            kind,
            subject: subject.into(),
            reference,
            region,
            source_finding: None,
        };
        query.validate()?;
        Ok(query)
    }

    pub fn distance(subject: &str, reference: &str) -> Self {
        Self::new(QueryKind::DistanceBetween, subject, Some(reference.to_string()), None)
            .expect("well-formed distance query")
    }

    pub fn with_source(mut self, source: FindingRef) -> Self {
        self.source_finding = Some(source);
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.subject.trim().is_empty() {
            return Err(QueryError::EmptyName);
        }
        let names_ok = |n: &Option<String>| n.as_ref().is_none_or(|s| !s.trim().is_empty());
        if !names_ok(&self.reference) || !names_ok(&self.region) {
            return Err(QueryError::EmptyName);
        }
        match (self.kind, &self.reference) {
            (QueryKind::DistanceBetween, None) => Err(QueryError::MissingReference),
            (QueryKind::DistanceBetween, Some(_)) | (_, None) => Ok(()),
            (_, Some(_)) => Err(QueryError::UnexpectedReference),
        }
    }
}

impl fmt::Display for MeasurementQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let subject = match &self.region {
            Some(region) => format!("the {} in the {region}", self.subject),
            None => format!("the {}", self.subject),
        };
        match self.kind {
            QueryKind::DistanceBetween => write!(
                f,
                "measure the distance between {subject} and the {}",
                self.reference.as_deref().unwrap_or("?")
            ),
            QueryKind::DiameterOf => write!(f, "measure the diameter of {subject}"),
            QueryKind::DimensionsOf => write!(f, "measure the dimensions of {subject}"),
            QueryKind::WidthOf => write!(f, "measure the width of {subject}"),
            QueryKind::HeightOf => write!(f, "measure the height of {subject}"),
            QueryKind::ExistenceOf => write!(f, "is {subject} present"),
        }
    }
}

/// Which query kinds the generator may emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryGate {
    /// Only endotracheal-tube distance queries.
    #[default]
    EttOnly,
    /// The full vocabulary.
    All,
}

fn query_for(finding: &MeasuredFinding) -> Option<MeasurementQuery> {
    if finding.polarity == Polarity::Absent {
        return None;
    }
    let subject = finding.object_name.clone();
    let region = finding.region.clone();
    let sized = |region: Option<String>| {
        let kind = if finding.values_cm.len() >= 2 {
            QueryKind::DimensionsOf
        } else {
            QueryKind::DiameterOf
        };
        MeasurementQuery::new(kind, subject.clone(), None, region).ok()
    };
    let query = match finding.category {
        Category::EndotrachealTube => Some(MeasurementQuery::distance(ETT_NAME, CARINA_NAME)),
        Category::Lesion => sized(region),
        Category::Pneumothorax => match region {
            Some(r) => MeasurementQuery::new(QueryKind::WidthOf, subject.clone(), None, Some(r)).ok(),
            None => sized(None),
        },
        Category::OtherTubeCatheter => finding
            .reference
            .as_deref()
            .map(|r| MeasurementQuery::distance(&subject, r)),
        Category::Other => match finding.reference.as_deref() {
            Some(r) => Some(MeasurementQuery::distance(&subject, r)),
            None => sized(region),
        },
    }?;
    Some(query.with_source(FindingRef {
        sentence_index: finding.sentence_index,
        char_span: finding.char_span,
    }))
}

/// One query per present finding, in finding order, over the full vocabulary.
pub fn generate_queries(findings: &[MeasuredFinding]) -> Vec<MeasurementQuery> {
    generate_queries_gated(findings, QueryGate::All)
}

pub fn generate_queries_gated(findings: &[MeasuredFinding], gate: QueryGate) -> Vec<MeasurementQuery> {
    findings
        .iter()
        .filter(|f| gate == QueryGate::All || f.category == Category::EndotrachealTube)
        .filter_map(query_for)
        .collect()
}

/// Queries for a whole report: the finding-derived queries plus a distance
/// query for a mentioned tube whose report gives no value.
pub fn queries_for_report(
    findings: &[MeasuredFinding],
    ett: &EttObservation,
    gate: QueryGate,
) -> Vec<MeasurementQuery> {
    let mut queries = generate_queries_gated(findings, gate);
    let has_ett_query = queries
        .iter()
        .any(|q| q.kind == QueryKind::DistanceBetween && q.subject == ETT_NAME);
    if ett.present && !has_ett_query {
        queries.push(MeasurementQuery::distance(ETT_NAME, CARINA_NAME));
    }
    queries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::{extract_measured_findings, CategoryLexicon, MeasurementForm};

    fn finding(name: &str, category: Category, values: &[f64], region: Option<&str>) -> MeasuredFinding {
        MeasuredFinding {
            object_name: name.into(),
            category,
            values_cm: values.to_vec(),
            form: MeasurementForm::Scalar,
            sentence_index: 0,
            char_span: (0, 1),
            mention_span: (0, 1),
            polarity: Polarity::Present,
            region: region.map(str::to_string),
            reference: None,
            direction: None,
            multi_object: false,
        }
    }

    #[test]
    fn ett_distance() {
        let q = generate_queries(&[finding(ETT_NAME, Category::EndotrachealTube, &[2.3], None)]);
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].kind, QueryKind::DistanceBetween);
        assert_eq!(q[0].subject, "endotracheal tube");
        assert_eq!(q[0].reference.as_deref(), Some("carina"));
        assert_eq!(q[0].to_string(), "measure the distance between the endotracheal tube and the carina");
    }

    #[test]
    fn opacity_dimensions_with_region() {
        let q = generate_queries(&[finding("opacity", Category::Lesion, &[6.0, 3.0], Some("right central"))]);
        assert_eq!(q[0].kind, QueryKind::DimensionsOf);
        assert_eq!(q[0].region.as_deref(), Some("right central"));
        assert_eq!(q[0].to_string(), "measure the dimensions of the opacity in the right central");
        let q = generate_queries(&[finding("nodule", Category::Lesion, &[0.8], None)]);
        assert_eq!(q[0].kind, QueryKind::DiameterOf);
    }

    #[test]
    fn pneumothorax_width_or_diameter() {
        let q = generate_queries(&[finding("pneumothorax", Category::Pneumothorax, &[2.3], Some("right apical"))]);
        assert_eq!(q[0].kind, QueryKind::WidthOf);
        let q = generate_queries(&[finding("pneumothorax", Category::Pneumothorax, &[2.3], None)]);
        assert_eq!(q[0].kind, QueryKind::DiameterOf);
    }

    #[test]
    fn empty_and_absent() {
        assert!(generate_queries(&[]).is_empty());
        let mut f = finding(ETT_NAME, Category::EndotrachealTube, &[4.0], None);
        f.polarity = Polarity::Absent;
        assert!(generate_queries(&[f]).is_empty());
    }

    #[test]
    fn gate_filters_non_ett() {
        let fs = vec![
            finding("nodule", Category::Lesion, &[1.0], None),
            finding(ETT_NAME, Category::EndotrachealTube, &[4.0], None),
        ];
        assert_eq!(generate_queries_gated(&fs, QueryGate::EttOnly).len(), 1);
        assert_eq!(generate_queries_gated(&fs, QueryGate::All).len(), 2);
    }

    #[test]
    fn from_worked_report() {
        let r = "The endotracheal tube terminates 2.3 cm above the carina. There is a new dense right \
                 central opacity measuring about 6 cm x 3 cm.";
        let fs = extract_measured_findings(r, &CategoryLexicon::default());
        let q = generate_queries(&fs);
        let text: Vec<String> = q.iter().map(|q| q.to_string()).collect();
        assert_eq!(
            text,
            vec![
                "measure the distance between the endotracheal tube and the carina",
                "measure the dimensions of the opacity in the right central",
            ]
        );
    }

    #[test]
    fn mentioned_tube_without_value_gets_query() {
        let ett = EttObservation {
            present: true,
            measurement_cm: None,
            placement: None,
        };
        let q = queries_for_report(&[], &ett, QueryGate::EttOnly);
        assert_eq!(q, vec![MeasurementQuery::distance(ETT_NAME, CARINA_NAME)]);
        assert!(queries_for_report(&[], &EttObservation::ABSENT, QueryGate::EttOnly).is_empty());
    }

    #[test]
    fn query_invariants() {
        assert_eq!(
            MeasurementQuery::new(QueryKind::DistanceBetween, "a", None, None),
            Err(QueryError::MissingReference)
        );
        assert_eq!(
            MeasurementQuery::new(QueryKind::DiameterOf, "a", Some("b".into()), None),
            Err(QueryError::UnexpectedReference)
        );
        assert_eq!(MeasurementQuery::new(QueryKind::DiameterOf, " ", None, None), Err(QueryError::EmptyName));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_finding() -> impl Strategy<Value = MeasuredFinding> {
            (0usize..5, 1usize..3, any::<bool>(), any::<bool>(), 0usize..100).prop_map(|(c, n, absent, region, idx)| {
                let (name, cat) = [
                    (ETT_NAME, Category::EndotrachealTube),
                    ("picc", Category::OtherTubeCatheter),
                    ("nodule", Category::Lesion),
                    ("pneumothorax", Category::Pneumothorax),
                    ("calcification", Category::Other),
                ][c];
                let mut f = finding(name, cat, &vec![1.5; n], region.then_some("left upper lung"));
                f.sentence_index = idx;
                if absent {
                    f.polarity = Polarity::Absent;
                }
                f
            })
        }

        proptest! {
            #[test]
            fn bounded_and_order_stable(fs in proptest::collection::vec(arb_finding(), 0..12)) {
                let q = generate_queries(&fs);
                let present = fs.iter().filter(|f| f.polarity == Polarity::Present).count();
                prop_assert!(q.len() <= present);
                for query in &q {
                    prop_assert!(query.validate().is_ok());
                }
                // the concatenation of per-finding outputs equals the batch output
                let piecewise: Vec<_> = fs.iter().flat_map(|f| generate_queries(std::slice::from_ref(f))).collect();
                prop_assert_eq!(&piecewise, &q);
                let mut rev = fs.clone();
                rev.reverse();
                let mut q_rev = generate_queries(&rev);
                q_rev.reverse();
                prop_assert_eq!(q_rev, q);
            }
        }
    }
}
