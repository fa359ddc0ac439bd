use chexfix_core::backend::{FixtureAnnotation, FixtureBackend, FixtureStore, Normalized};
use chexfix_core::exec::{execute_all, Executor, Outcome};
use chexfix_core::mask::Rle;
use chexfix_core::model::{BBox, ImageSize, PixelSpacing, StudyRecord};
use chexfix_core::plan::{Plan, PlanStep};
use chexfix_core::query::{MeasurementQuery, QueryKind};
use proptest::prelude::*;

const W: u32 = 64;
const H: u32 = 48;

fn study(sx: f64, sy: f64) -> StudyRecord {
    StudyRecord::new(
        "p",
        "img",
        ImageSize::new(W, H).unwrap(),
        PixelSpacing::new(sx, sy).unwrap(),
        "report",
    )
    .unwrap()
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..W as f64, 0.0..H as f64, 0.0..W as f64, 0.0..H as f64).prop_map(|(a, b, c, d)| {
        BBox::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap()
    })
}

fn arb_mask() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), (W * H) as usize)
}

fn backend_with(boxes: &[(&str, BBox, f64)], mask: Option<(&str, &[bool])>) -> Normalized<FixtureBackend> {
    let mut ann = FixtureAnnotation::new("p");
    for (name, b, c) in boxes {
        ann.add_box(name, *b, *c);
    }
    if let Some((name, dense)) = mask {
        ann.add_mask(name, Rle::from_dense(ImageSize::new(W, H).unwrap(), dense).unwrap());
    }
    let mut store = FixtureStore::default();
    store.insert(ann);
    Normalized::new(FixtureBackend::new("fx", store))
}

fn scalar(o: &Outcome) -> f64 {
    match o {
        Outcome::Scalar { value_cm } => *value_cm,
        other => panic!("expected scalar, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn distance_is_symmetric(a in arb_box(), b in arb_box(), sx in 0.05..1.0f64, sy in 0.05..1.0f64) {
        let backend = backend_with(&[("alpha", a, 1.0), ("beta", b, 1.0)], None);
        let s = study(sx, sy);
        let r = execute_all(&s, &backend, &[
            MeasurementQuery::distance("alpha", "beta"),
            MeasurementQuery::distance("beta", "alpha"),
        ]);
        let (ab, ba) = (scalar(&r[0].outcome), scalar(&r[1].outcome));
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab.is_finite() && ab >= 0.0);
    }

    #[test]
    fn distance_to_self_is_zero(a in arb_box(), sx in 0.05..1.0f64) {
        let backend = backend_with(&[("alpha", a, 1.0)], None);
        let r = execute_all(&study(sx, sx), &backend, &[MeasurementQuery::distance("alpha", "alpha")]);
        prop_assert_eq!(scalar(&r[0].outcome), 0.0);
    }

    #[test]
    fn diameter_and_dimensions_agree_with_box_edges(a in arb_box(), sx in 0.05..1.0f64, sy in 0.05..1.0f64) {
        let backend = backend_with(&[("mass", a, 1.0)], None);
        let q = |k| MeasurementQuery::new(k, "mass", None, None).unwrap();
        let r = execute_all(&study(sx, sy), &backend, &[q(QueryKind::DiameterOf), q(QueryKind::DimensionsOf)]);
        let w = a.width_px() * sx / 10.0;
        let h = a.height_px() * sy / 10.0;
        let d = scalar(&r[0].outcome);
        prop_assert!((d - w.max(h)).abs() < 1e-12);
        match r[1].outcome {
            Outcome::Dims { major_cm, minor_cm } => {
                prop_assert_eq!(major_cm.to_bits(), d.to_bits());
                prop_assert!((minor_cm - w.min(h)).abs() < 1e-12);
            }
            ref other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn filter_survivors_are_within_region(
        boxes in prop::collection::vec((arb_box(), 0.0..=1.0f64), 1..8),
        dense in arb_mask(),
    ) {
        let named: Vec<(&str, BBox, f64)> = boxes.iter().map(|(b, c)| ("nodule", *b, *c)).collect();
        let backend = backend_with(&named, Some(("zone", &dense)));
        let s = study(0.5, 0.5);
        let filtered = Plan::new(vec![
            PlanStep::Find("nodule".into()),
            PlanStep::Segment("zone".into()),
            PlanStep::Filter { objects: 0, region: 1 },
            PlanStep::Guard(vec![2]),
            PlanStep::Diameter(2),
        ]).unwrap();
        let within = Plan::new(vec![
            PlanStep::Find("nodule".into()),
            PlanStep::Segment("zone".into()),
            PlanStep::Filter { objects: 0, region: 1 },
            PlanStep::Within { object: 2, region: 1 },
        ]).unwrap();
        let q = MeasurementQuery::new(QueryKind::DiameterOf, "nodule", None, Some("zone".into())).unwrap();
        let mut ex = Executor::new(&s, &backend);
        let measured = ex.execute_plan(&q, &filtered);
        let inside = ex.execute_plan(&q, &within);

        // brute force: survivors are boxes whose center pixel is foreground
        let survivors: Vec<&BBox> = boxes
            .iter()
            .map(|(b, _)| b)
            .filter(|b| {
                let (x, y) = b.center();
                let px = (x.floor() as usize).min(W as usize - 1);
                let py = (y.floor() as usize).min(H as usize - 1);
                dense[py * W as usize + px]
            })
            .collect();
        if survivors.is_empty() {
            prop_assert_eq!(measured.outcome, Outcome::NotPresent { object: "nodule".into() });
            prop_assert!(matches!(inside.outcome, Outcome::NotPresent { .. }), "{:?}", inside.outcome);
        } else {
            prop_assert!(matches!(measured.outcome, Outcome::Scalar { .. }), "{:?}", measured.outcome);
            prop_assert!(matches!(inside.outcome, Outcome::Present { .. }), "{:?}", inside.outcome);
        }
    }

    #[test]
    fn execution_is_deterministic(a in arb_box(), b in arb_box(), c in 0.0..=1.0f64) {
        let run = || {
            let backend = backend_with(&[("endotracheal tube", a, c), ("carina", b, 1.0)], None);
            let r = execute_all(&study(0.3, 0.3), &backend, &[MeasurementQuery::distance("endotracheal tube", "carina")]);
            serde_json::to_string(&r).unwrap()
        };
        prop_assert_eq!(run(), run());
    }
}
