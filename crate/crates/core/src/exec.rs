//! Plan execution against a backend.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::{object_key, BackendError, ToolBackend};
use crate::geometry::{center_distance_cm, px_height_to_cm, px_width_to_cm};
use crate::model::{CxrObject, CxrSegmentation, StudyRecord};
use crate::plan::{compile, Plan, PlanStep};
use crate::query::MeasurementQuery;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Scalar { value_cm: f64 },
    Dims { major_cm: f64, minor_cm: f64 },
    NotPresent { object: String },
    Present { confidence: f64 },
    Failed { message: String },
}

impl Outcome {
    pub fn is_failed(&self) -> bool {
        matches!(self, Outcome::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub step: usize,
    pub op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    pub query: MeasurementQuery,
    pub outcome: Outcome,
    pub provenance: Vec<ProvenanceEntry>,
}

#[derive(Debug, Clone)]
enum Value {
    Bool(bool, f64),
    Objects(Vec<CxrObject>),
    Mask(CxrSegmentation),
    Unit,
    Scalar(f64),
    Dims(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum CallOp {
    Exists,
    Find,
    Segment,
}

/// The single object a measurement is taken from: highest confidence, then
/// smaller area, then the lexicographically smallest box.
pub fn select_singleton(objects: &[CxrObject]) -> Option<&CxrObject> {
    objects.iter().min_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.bbox.area_px().total_cmp(&b.bbox.area_px()))
            .then_with(|| {
                a.bbox
                    .as_array()
                    .iter()
                    .zip(b.bbox.as_array().iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    })
}

/// Runs plans for one study. Backend calls are cached per (operation,
/// object name), so repeated queries reuse detections.
pub struct Executor<'a> {
    study: &'a StudyRecord,
    backend: &'a dyn ToolBackend,
    cache: HashMap<(CallOp, String), Result<Value, BackendError>>,
    calls: usize,
}

enum Stop {
    NotPresent(String),
    Failed(String),
}

impl<'a> Executor<'a> {
    pub fn new(study: &'a StudyRecord, backend: &'a dyn ToolBackend) -> Self {
        Self {
            study,
            backend,
            cache: HashMap::new(),
            calls: 0,
        }
    }

    /// Number of backend calls made so far (cache misses).
    pub fn backend_calls(&self) -> usize {
        self.calls
    }

    pub fn execute(&mut self, query: &MeasurementQuery) -> MeasurementResult {
        match compile(query) {
            Ok(plan) => self.execute_plan(query, &plan),
            Err(e) => MeasurementResult {
                query: query.clone(),
                outcome: Outcome::Failed { message: e.to_string() },
                provenance: Vec::new(),
            },
        }
    }

    pub fn execute_plan(&mut self, query: &MeasurementQuery, plan: &Plan) -> MeasurementResult {
        let mut provenance = Vec::new();
        let outcome = match self.run(plan, &mut provenance) {
            Ok(Value::Scalar(v)) => Outcome::Scalar { value_cm: v },
            Ok(Value::Dims(a, b)) => Outcome::Dims {
                major_cm: a,
                minor_cm: b,
            },
            Ok(Value::Bool(true, confidence)) => Outcome::Present { confidence },
            Ok(Value::Bool(false, _)) => Outcome::NotPresent {
                object: plan.subject_of(plan.steps().len() - 1).unwrap_or(&query.subject).to_string(),
            },
            Ok(_) => Outcome::Failed {
                message: "plan did not produce a measurement".into(),
            },
            Err(Stop::NotPresent(object)) => Outcome::NotPresent { object },
            Err(Stop::Failed(message)) => Outcome::Failed { message },
        };
        MeasurementResult {
            query: query.clone(),
            outcome,
            provenance,
        }
    }

    fn call(&mut self, op: CallOp, name: &str) -> Result<Value, BackendError> {
        let key = (op, object_key(name));
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        self.calls += 1;
        let value = match op {
            CallOp::Exists => self
                .backend
                .exists(self.study, name)
                .map(|e| Value::Bool(e.exists, e.confidence)),
            CallOp::Find => self.backend.find(self.study, name).map(Value::Objects),
            CallOp::Segment => self.backend.segment(self.study, name).map(Value::Mask),
        };
        self.cache.insert(key, value.clone());
        value
    }

    fn run(&mut self, plan: &Plan, provenance: &mut Vec<ProvenanceEntry>) -> Result<Value, Stop> {
        let spacing = self.study.pixel_spacing;
        let geometry = |r: Result<f64, crate::geometry::GeometryError>| r.map_err(|e| Stop::Failed(e.to_string()));
        let mut values: Vec<Value> = Vec::with_capacity(plan.steps().len());
        for (i, step) in plan.steps().iter().enumerate() {
            let mut entry = ProvenanceEntry {
                step: i,
                op: step.op_name().to_string(),
                object: plan.subject_of(i).map(str::to_string),
                tool: None,
                confidence: None,
            };
            let objects = |r: usize| match &values[r] {
                Value::Objects(o) => o.as_slice(),
                _ => unreachable!("plan type-checked"),
            };
            let mask = |r: usize| match &values[r] {
                Value::Mask(m) => m,
                _ => unreachable!("plan type-checked"),
            };
            let single = |r: usize| select_singleton(objects(r)).ok_or_else(|| {
                Stop::NotPresent(plan.subject_of(r).unwrap_or_default().to_string())
            });
            let value = match step {
                PlanStep::Exists(name) | PlanStep::Find(name) | PlanStep::Segment(name) => {
                    let op = match step {
                        PlanStep::Exists(_) => CallOp::Exists,
                        PlanStep::Find(_) => CallOp::Find,
                        _ => CallOp::Segment,
                    };
                    entry.tool = Some(self.backend.tool_for(name));
                    let v = self
                        .call(op, name)
                        .map_err(|e| Stop::Failed(format!("{} '{name}': {e}", step.op_name())))?;
                    entry.confidence = match &v {
                        Value::Bool(_, c) => Some(*c),
                        Value::Objects(o) => select_singleton(o).map(|o| o.confidence),
                        _ => None,
                    };
                    v
                }
                PlanStep::Filter { objects: o, region } => {
                    let m = &mask(*region).mask;
                    Value::Objects(
                        objects(*o)
                            .iter()
                            .filter(|obj| {
                                let (x, y) = obj.center();
                                m.contains_point(x, y)
                            })
                            .cloned()
                            .collect(),
                    )
                }
                PlanStep::Within { object, region } => {
                    let m = &mask(*region).mask;
                    match select_singleton(objects(*object)) {
                        Some(obj) => {
                            let (x, y) = obj.center();
                            Value::Bool(m.contains_point(x, y), obj.confidence)
                        }
                        None => Value::Bool(false, 0.0),
                    }
                }
                PlanStep::Guard(refs) => {
                    for r in refs {
                        let empty = match &values[*r] {
                            Value::Objects(o) => o.is_empty(),
                            Value::Mask(m) => m.is_empty(),
                            _ => unreachable!("plan type-checked"),
                        };
                        if empty {
                            provenance.push(entry);
                            return Err(Stop::NotPresent(plan.subject_of(*r).unwrap_or_default().to_string()));
                        }
                    }
                    Value::Unit
                }
                PlanStep::Distance(a, b) => {
                    let (oa, ob) = (single(*a)?, single(*b)?);
                    entry.confidence = Some(oa.confidence.min(ob.confidence));
                    Value::Scalar(geometry(center_distance_cm(oa.center(), ob.center(), spacing))?)
                }
                PlanStep::Diameter(r) | PlanStep::Dimensions(r) => {
                    let o = single(*r)?;
                    entry.confidence = Some(o.confidence);
                    let w = geometry(px_width_to_cm(o.bbox.width_px(), spacing))?;
                    let h = geometry(px_height_to_cm(o.bbox.height_px(), spacing))?;
                    if matches!(step, PlanStep::Diameter(_)) {
                        Value::Scalar(w.max(h))
                    } else {
                        Value::Dims(w.max(h), w.min(h))
                    }
                }
                PlanStep::Width(r) => {
                    Value::Scalar(geometry(px_width_to_cm(mask(*r).mask.widest_row_px() as f64, spacing))?)
                }
                PlanStep::Height(r) => {
                    Value::Scalar(geometry(px_height_to_cm(mask(*r).mask.tallest_column_px() as f64, spacing))?)
                }
            };
            provenance.push(entry);
            values.push(value);
        }
        Ok(values.pop().expect("plans are non-empty"))
    }
}

/// Executes every query for one study with a shared cache.
pub fn execute_all(
    study: &StudyRecord,
    backend: &dyn ToolBackend,
    queries: &[MeasurementQuery],
) -> Vec<MeasurementResult> {
    let mut executor = Executor::new(study, backend);
    queries.iter().map(|q| executor.execute(q)).collect()
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::backend::{Existence, FixtureAnnotation, FixtureBackend, FixtureStore, Normalized};
    use crate::mask::Rle;
    use crate::model::{BBox, ImageSize, PixelSpacing};
    use crate::query::QueryKind;

    fn study(spacing: f64) -> StudyRecord {
        StudyRecord::new(
            "s",
            "img",
            ImageSize::new(400, 400).unwrap(),
            PixelSpacing::new(spacing, spacing).unwrap(),
            "report",
        )
        .unwrap()
    }

    fn backend(lines: &str) -> Normalized<FixtureBackend> {
        Normalized::new(FixtureBackend::new("fixtures", FixtureStore::parse(lines, "t").unwrap()))
    }

    #[test]
    fn ett_distance_from_points() {
        let b = backend("s\tendotracheal tube\t100,200,100,200\t0.9\ns\tcarina\t100,260,100,260\t0.8\n");
        let r = execute_all(&study(0.5), &b, &[MeasurementQuery::distance("endotracheal tube", "carina")]);
        assert_eq!(r[0].outcome, Outcome::Scalar { value_cm: 3.0 });
        assert_eq!(r[0].provenance.len(), 4);
        assert_eq!(r[0].provenance[0].tool.as_deref(), Some("fixtures"));
        assert_eq!(r[0].provenance[3].confidence, Some(0.8));
    }

    #[test]
    fn distance_between_box_centers() {
        // hand computation: centers (15, 25) and (45, 65); 30 px, 40 px at 0.2 mm -> 1.0 cm
        let b = backend("s\tendotracheal tube\t10,20,20,30\t1\ns\tcarina\t40,60,50,70\t1\n");
        let r = execute_all(&study(0.2), &b, &[MeasurementQuery::distance("endotracheal tube", "carina")]);
        let Outcome::Scalar { value_cm } = r[0].outcome else { panic!() };
        assert!((value_cm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_objects_short_circuit() {
        let b = backend("s\tcarina\t1,1,1,1\t1\n");
        let r = execute_all(&study(0.5), &b, &[MeasurementQuery::distance("endotracheal tube", "carina")]);
        assert_eq!(
            r[0].outcome,
            Outcome::NotPresent {
                object: "endotracheal tube".into()
            }
        );
        let b = backend("s\tendotracheal tube\t1,1,1,1\t1\n");
        let r = execute_all(&study(0.5), &b, &[MeasurementQuery::distance("endotracheal tube", "carina")]);
        assert_eq!(r[0].outcome, Outcome::NotPresent { object: "carina".into() });
    }

    #[test]
    fn diameter_and_dimensions() {
        let b = backend("s\tnodule\t0,0,40,20\t1\n");
        let s = study(1.0);
        let q = |k| MeasurementQuery::new(k, "nodule", None, None).unwrap();
        let r = execute_all(&s, &b, &[q(QueryKind::DiameterOf), q(QueryKind::DimensionsOf)]);
        assert_eq!(r[0].outcome, Outcome::Scalar { value_cm: 4.0 });
        assert_eq!(
            r[1].outcome,
            Outcome::Dims {
                major_cm: 4.0,
                minor_cm: 2.0
            }
        );
    }

    #[test]
    fn region_filter() {
        let size = ImageSize::new(400, 400).unwrap();
        let mut dense = vec![false; size.pixel_count()];
        for y in 0..400 {
            for x in 0..200 {
                dense[y * 400 + x] = true;
            }
        }
        let mut ann = FixtureAnnotation::new("s");
        ann.add_mask("right lung", Rle::from_dense(size, &dense).unwrap());
        ann.add_box("nodule", BBox::new(250.0, 10.0, 270.0, 20.0).unwrap(), 1.0);
        ann.add_box("nodule", BBox::new(50.0, 10.0, 60.0, 20.0).unwrap(), 0.5);
        let mut store = FixtureStore::default();
        store.insert(ann);
        let b = Normalized::new(FixtureBackend::new("f", store));
        let s = study(1.0);
        let with_region = MeasurementQuery::new(QueryKind::DiameterOf, "nodule", None, Some("right lung".into())).unwrap();
        let without = MeasurementQuery::new(QueryKind::DiameterOf, "nodule", None, None).unwrap();
        let in_left =
            MeasurementQuery::new(QueryKind::DiameterOf, "nodule", None, Some("left lung".into())).unwrap();
        let r = execute_all(&s, &b, &[with_region, without, in_left]);
        assert_eq!(r[0].outcome, Outcome::Scalar { value_cm: 1.0 });
        assert_eq!(r[1].outcome, Outcome::Scalar { value_cm: 2.0 });
        assert_eq!(r[2].outcome, Outcome::NotPresent { object: "nodule".into() });
    }

    #[test]
    fn width_and_height_of_mask() {
        let size = ImageSize::new(400, 400).unwrap();
        let mut dense = vec![false; size.pixel_count()];
        for y in 10..30 {
            for x in 100..150 {
                dense[y * 400 + x] = true;
            }
        }
        let mut ann = FixtureAnnotation::new("s");
        ann.add_mask("pneumothorax", Rle::from_dense(size, &dense).unwrap());
        let mut store = FixtureStore::default();
        store.insert(ann);
        let b = Normalized::new(FixtureBackend::new("f", store));
        let q = |k| MeasurementQuery::new(k, "pneumothorax", None, None).unwrap();
        let r = execute_all(&study(2.0), &b, &[q(QueryKind::WidthOf), q(QueryKind::HeightOf)]);
        assert_eq!(r[0].outcome, Outcome::Scalar { value_cm: 10.0 });
        assert_eq!(r[1].outcome, Outcome::Scalar { value_cm: 4.0 });
        let missing = MeasurementQuery::new(QueryKind::WidthOf, "heart", None, None).unwrap();
        assert_eq!(
            execute_all(&study(2.0), &b, &[missing])[0].outcome,
            Outcome::NotPresent { object: "heart".into() }
        );
    }

    #[test]
    fn existence() {
        let b = backend("s\tcarina\t1,1,1,1\t0.7\n");
        let q = |n| MeasurementQuery::new(QueryKind::ExistenceOf, n, None, None).unwrap();
        let r = execute_all(&study(1.0), &b, &[q("carina"), q("heart")]);
        assert_eq!(r[0].outcome, Outcome::Present { confidence: 0.7 });
        assert_eq!(r[1].outcome, Outcome::NotPresent { object: "heart".into() });
    }

    #[test]
    fn singleton_selection() {
        let obj = |b: [f64; 4], c| CxrObject::new("x", BBox::new(b[0], b[1], b[2], b[3]).unwrap(), c).unwrap();
        let objs = vec![
            obj([0.0, 0.0, 10.0, 10.0], 0.5),
            obj([5.0, 0.0, 7.0, 2.0], 0.9),
            obj([1.0, 0.0, 3.0, 2.0], 0.9),
            obj([0.0, 0.0, 20.0, 20.0], 0.9),
        ];
        assert_eq!(select_singleton(&objs).unwrap().bbox.left, 1.0);
        assert!(select_singleton(&[]).is_none());
    }

    struct Flaky(AtomicUsize);

    impl ToolBackend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn exists(&self, _: &StudyRecord, _: &str) -> Result<Existence, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn find(&self, _: &StudyRecord, name: &str) -> Result<Vec<CxrObject>, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            if name == "carina" {
                return Err(BackendError::Unavailable("timeout".into()));
            }
            Ok(vec![CxrObject::new(name, BBox::point(1.0, 1.0).unwrap(), 1.0).unwrap()])
        }
        fn segment(&self, s: &StudyRecord, name: &str) -> Result<CxrSegmentation, BackendError> {
            Ok(CxrSegmentation::empty(name, s.original_size))
        }
    }

    #[test]
    fn transport_failure_is_reported_not_raised() {
        let b = Flaky(AtomicUsize::new(0));
        let r = execute_all(&study(1.0), &b, &[MeasurementQuery::distance("endotracheal tube", "carina")]);
        assert!(r[0].outcome.is_failed(), "{:?}", r[0].outcome);
    }

    #[test]
    fn cache_deduplicates_calls() {
        let b = Flaky(AtomicUsize::new(0));
        let s = study(1.0);
        let q = MeasurementQuery::new(QueryKind::DiameterOf, "nodule", None, None).unwrap();
        let mut ex = Executor::new(&s, &b);
        let first = ex.execute(&q);
        let second = ex.execute(&q);
        assert_eq!(first, second);
        assert_eq!(ex.backend_calls(), 1);
        assert_eq!(b.0.load(Ordering::SeqCst), 1);
    }
}
