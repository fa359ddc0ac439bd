//! Seeded synthetic studies with annotation fixtures and perturbed model
//! reports. The generator records what it wrote, so tests can compute the
//! expected metrics without going through the extractor.

#![allow(dead_code)]

use chexfix::manifest::{ManifestEntry, Reports};
use chexfix_core::backend::{FixtureAnnotation, FixtureStore};
use chexfix_core::extractor::{CARINA_NAME, ETT_NAME};
use chexfix_core::model::{BBox, ImageSize, PixelSpacing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODEL: &str = "synth";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    Correct,
    WrongValue,
    MissingMeasurement,
    Hallucinated,
}

#[derive(Debug, Clone)]
pub struct Expected {
    pub study_id: String,
    pub kind: Perturbation,
    /// Annotated distance rounded to a tenth; `None` without a tube.
    pub gt_cm: Option<f64>,
    /// The value written into the model report, if any.
    pub model_cm: Option<f64>,
}

pub struct Synthetic {
    pub manifest: Vec<ManifestEntry>,
    pub fixtures: FixtureStore,
    pub expected: Vec<Expected>,
}

impl Synthetic {
    /// Mean absolute error the original corpus should show, counting a
    /// missing model value as zero.
    pub fn expected_original_mae(&self) -> f64 {
        let errors: Vec<f64> = self
            .expected
            .iter()
            .filter_map(|e| {
                let gt = e.gt_cm?;
                Some(match e.kind {
                    Perturbation::MissingMeasurement => gt,
                    _ => (gt - e.model_cm.expect("value written")).abs(),
                })
            })
            .collect();
        errors.iter().sum::<f64>() / errors.len() as f64
    }

    /// Presence precision of the original corpus: every model report claims
    /// a tube, and only hallucinated ones are wrong.
    pub fn expected_original_precision(&self) -> f64 {
        let wrong = self.expected.iter().filter(|e| e.kind == Perturbation::Hallucinated).count();
        (self.expected.len() - wrong) as f64 / self.expected.len() as f64
    }

    pub fn count(&self, kind: Perturbation) -> usize {
        self.expected.iter().filter(|e| e.kind == kind).count()
    }
}

const FILLERS: [&str; 5] = [
    "Heart size is normal.",
    "Lungs are clear.",
    "No pneumothorax.",
    "Mild cardiomegaly.",
    "No pleural effusion.",
];

/// `n` studies; kinds cycle so that every fifth study has no tube and a
/// hallucinating model report.
pub fn generate(n: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Vec::with_capacity(n);
    let mut fixtures = FixtureStore::default();
    let mut expected = Vec::with_capacity(n);
    for i in 0..n {
        let study_id = format!("syn{i:03}");
        let kind = match i % 10 {
            0 | 5 => Perturbation::Hallucinated,
            1 | 6 => Perturbation::Correct,
            2 | 7 => Perturbation::MissingMeasurement,
            _ => Perturbation::WrongValue,
        };
        let (w, h) = if i % 2 == 0 { (2048, 2048) } else { (2500, 3000) };
        let (sx, sy) = match i % 3 {
            0 => (0.139, 0.139),
            1 => (0.16, 0.16),
            _ => (0.14, 0.15),
        };
        let size = ImageSize::new(w, h).unwrap();
        let spacing = PixelSpacing::new(sx, sy).unwrap();
        let cx = w as f64 / 2.0 + rng.gen_range(-40.0..40.0);
        let cy = h as f64 * 0.55;
        let mut ann = FixtureAnnotation::new(&study_id);
        ann.add_box(CARINA_NAME, BBox::new(cx - 4.0, cy - 4.0, cx + 4.0, cy + 4.0).unwrap(), 0.95);
        let filler = FILLERS[rng.gen_range(0..FILLERS.len())];

        let (gt_report, model_report, gt_cm, model_cm) = if kind == Perturbation::Hallucinated {
            let claimed = rng.gen_range(20..80) as f64 / 10.0;
            (
                format!("No acute cardiopulmonary process. {filler}"),
                format!("The endotracheal tube tip is {claimed:.1} cm above the carina. {filler}"),
                None,
                Some(claimed),
            )
        } else {
            // keep the true distance 0.03 cm past a tenth so rounding is unambiguous
            let tenths = rng.gen_range(10..90);
            let d = tenths as f64 / 10.0 + 0.03;
            let dx = rng.gen_range(-20.0..20.0f64);
            let dy = ((10.0 * d).powi(2) - (dx * sx).powi(2)).sqrt() / sy;
            ann.add_box(ETT_NAME, BBox::point(cx + dx, cy - dy).unwrap(), 0.9);
            if i % 4 == 3 {
                // a weaker distractor the singleton rule must ignore
                ann.add_box(ETT_NAME, BBox::point(cx + 300.0, cy - 400.0).unwrap(), 0.3);
            }
            let gt = tenths as f64 / 10.0;
            let (report, value) = match kind {
                Perturbation::Correct => (
                    format!("The endotracheal tube tip is {gt:.1} cm above the carina. {filler}"),
                    Some(gt),
                ),
                Perturbation::WrongValue => {
                    let delta = rng.gen_range(5..30) as f64 / 10.0;
                    let v = if gt - delta >= 0.5 && rng.gen_bool(0.5) { gt - delta } else { gt + delta };
                    let v = (v * 10.0).round() / 10.0;
                    (format!("ETT terminates {v:.1} cm above the carina. {filler}"), Some(v))
                }
                _ => (format!("Endotracheal tube in standard position. {filler}"), None),
            };
            (
                format!("Endotracheal tube in place. {filler}"),
                report,
                Some(gt),
                value,
            )
        };

        fixtures.insert(ann);
        manifest.push(ManifestEntry {
            study_id: study_id.clone(),
            image_ref: format!("{study_id}.png"),
            original_size: size,
            pixel_spacing_mm: spacing,
            model_image_size: Default::default(),
            reports: Reports {
                ground_truth: gt_report,
                models: [(MODEL.to_string(), model_report)].into_iter().collect(),
            },
        });
        expected.push(Expected {
            study_id,
            kind,
            gt_cm,
            model_cm,
        });
    }
    Synthetic {
        manifest,
        fixtures,
        expected,
    }
}
