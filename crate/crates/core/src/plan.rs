//! Query plans over the measurement API.
//!
//! A [`Plan`] is a straight-line program: each step calls one API method and
//! may consume the outputs of earlier steps by index. [`compile`] maps every
//! query kind to a fixed plan shape, and [`Plan::new`] type-checks the step
//! references so the executor never sees a malformed plan.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{MeasurementQuery, QueryError, QueryKind};

pub type StepRef = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("plan has no steps")]
    Empty,
    #[error("step {step} refers to step {reference}, which does not precede it")]
    ForwardRef { step: usize, reference: StepRef },
    #[error("step {step} expects {expected} from step {reference}, found {found}")]
    TypeMismatch {
        step: usize,
        reference: StepRef,
        expected: ValueKind,
        found: ValueKind,
    },
    #[error("plan ends in {found}, query needs {expected}")]
    WrongResult { expected: ValueKind, found: ValueKind },
    #[error("unsupported query: {0}")]
    UnsupportedQuery(#[from] QueryError),
}

/// Type of a step's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Bool,
    Objects,
    Mask,
    Unit,
    Scalar,
    Dims,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueKind::Bool => "bool",
            ValueKind::Objects => "objects",
            ValueKind::Mask => "mask",
            ValueKind::Unit => "unit",
            ValueKind::Scalar => "scalar",
            ValueKind::Dims => "dims",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStep {
    Exists(String),
    Find(String),
    Segment(String),
    /// Objects whose center lies inside the region mask.
    Filter { objects: StepRef, region: StepRef },
    /// Whether the selected object's center lies inside the region mask.
    Within { object: StepRef, region: StepRef },
    /// Stops the plan with "not present" if any referenced output is empty.
    Guard(Vec<StepRef>),
    Distance(StepRef, StepRef),
    Diameter(StepRef),
    Dimensions(StepRef),
    Width(StepRef),
    Height(StepRef),
}

impl PlanStep {
    pub fn output(&self) -> ValueKind {
        match self {
            PlanStep::Exists(_) | PlanStep::Within { .. } => ValueKind::Bool,
            PlanStep::Find(_) | PlanStep::Filter { .. } => ValueKind::Objects,
            PlanStep::Segment(_) => ValueKind::Mask,
            PlanStep::Guard(_) => ValueKind::Unit,
            PlanStep::Distance(..)
            | PlanStep::Diameter(_)
            | PlanStep::Width(_)
            | PlanStep::Height(_) => ValueKind::Scalar,
            PlanStep::Dimensions(_) => ValueKind::Dims,
        }
    }

    /// Input references with the kind each one must have. Guard accepts
    /// objects or masks, reported here as `None`.
    fn inputs(&self) -> Vec<(StepRef, Option<ValueKind>)> {
        use ValueKind::{Mask, Objects};
        match self {
            PlanStep::Exists(_) | PlanStep::Find(_) | PlanStep::Segment(_) => Vec::new(),
            PlanStep::Filter { objects, region } => vec![(*objects, Some(Objects)), (*region, Some(Mask))],
            PlanStep::Within { object, region } => vec![(*object, Some(Objects)), (*region, Some(Mask))],
            PlanStep::Guard(refs) => refs.iter().map(|r| (*r, None)).collect(),
            PlanStep::Distance(a, b) => vec![(*a, Some(Objects)), (*b, Some(Objects))],
            PlanStep::Diameter(r) | PlanStep::Dimensions(r) => vec![(*r, Some(Objects))],
            PlanStep::Width(r) | PlanStep::Height(r) => vec![(*r, Some(Mask))],
        }
    }

    pub fn op_name(&self) -> &'static str {
        match self {
            PlanStep::Exists(_) => "exists",
            PlanStep::Find(_) => "find",
            PlanStep::Segment(_) => "segment",
            PlanStep::Filter { .. } => "filter",
            PlanStep::Within { .. } => "within",
            PlanStep::Guard(_) => "guard",
            PlanStep::Distance(..) => "distance",
            PlanStep::Diameter(_) => "diameter",
            PlanStep::Dimensions(_) => "dimensions",
            PlanStep::Width(_) => "width",
            PlanStep::Height(_) => "height",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    steps: Vec<PlanStep>,
}

impl Plan {
    pub fn new(steps: Vec<PlanStep>) -> Result<Self, PlanError> {
        if steps.is_empty() {
            return Err(PlanError::Empty);
        }
        for (i, step) in steps.iter().enumerate() {
            for (reference, expected) in step.inputs() {
                if reference >= i {
                    return Err(PlanError::ForwardRef { step: i, reference });
                }
                let found = steps[reference].output();
                let ok = match expected {
                    Some(kind) => kind == found,
                    None => matches!(found, ValueKind::Objects | ValueKind::Mask),
                };
                if !ok {
                    return Err(PlanError::TypeMismatch {
                        step: i,
                        reference,
                        expected: expected.unwrap_or(ValueKind::Objects),
                        found,
                    });
                }
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn result_kind(&self) -> ValueKind {
        self.steps.last().expect("plans are non-empty").output()
    }

    /// Object name that a step's output describes, following filters back to
    /// their source.
    pub fn subject_of(&self, step: StepRef) -> Option<&str> {
        match &self.steps[step] {
            PlanStep::Exists(n) | PlanStep::Find(n) | PlanStep::Segment(n) => Some(n),
            PlanStep::Filter { objects, .. } | PlanStep::Within { object: objects, .. } => {
                self.subject_of(*objects)
            }
            _ => None,
        }
    }
}

/// Output kind a query's plan must end in.
pub fn expected_result(kind: QueryKind) -> ValueKind {
    match kind {
        QueryKind::DistanceBetween
        | QueryKind::DiameterOf
        | QueryKind::WidthOf
        | QueryKind::HeightOf => ValueKind::Scalar,
        QueryKind::DimensionsOf => ValueKind::Dims,
        QueryKind::ExistenceOf => ValueKind::Bool,
    }
}

pub fn compile(query: &MeasurementQuery) -> Result<Plan, PlanError> {
    query.validate()?;
    let subject = query.subject.clone();
    let sized = |last: fn(StepRef) -> PlanStep| match &query.region {
        None => vec![PlanStep::Find(subject.clone()), PlanStep::Guard(vec![0]), last(0)],
        Some(region) => vec![
            PlanStep::Find(subject.clone()),
            PlanStep::Segment(region.clone()),
            PlanStep::Filter { objects: 0, region: 1 },
            PlanStep::Guard(vec![2]),
            last(2),
        ],
    };
    let steps = match query.kind {
        QueryKind::DistanceBetween => {
            let reference = query.reference.clone().ok_or(QueryError::MissingReference)?;
            vec![
                PlanStep::Find(subject),
                PlanStep::Find(reference),
                PlanStep::Guard(vec![0, 1]),
                PlanStep::Distance(0, 1),
            ]
        }
        QueryKind::DiameterOf => sized(PlanStep::Diameter),
        QueryKind::DimensionsOf => sized(PlanStep::Dimensions),
        QueryKind::WidthOf => vec![PlanStep::Segment(subject), PlanStep::Guard(vec![0]), PlanStep::Width(0)],
        QueryKind::HeightOf => vec![PlanStep::Segment(subject), PlanStep::Guard(vec![0]), PlanStep::Height(0)],
        QueryKind::ExistenceOf => vec![PlanStep::Exists(subject)],
    };
    let plan = Plan::new(steps)?;
    let expected = expected_result(query.kind);
    if plan.result_kind() != expected {
        return Err(PlanError::WrongResult {
            expected,
            found: plan.result_kind(),
        });
    }
    Ok(plan)
}
