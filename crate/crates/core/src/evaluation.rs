//! Ground-truth matching, precision/recall/F1 and false-positive diagnosis.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::pipeline::{run_method, Method, RunConfig};
use crate::synthesis::Scene;
use crate::taxonomy::{ClassId, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub bbox: BoundingBox,
    pub class_id: ClassId,
}

/// A final detection handed to the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bbox: BoundingBox,
    pub class_id: ClassId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// When set, predictions and ground truth are relabelled to these
    /// classes before matching.
    pub parent_relabel_targets: Option<BTreeSet<ClassId>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            parent_relabel_targets: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou_threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpDiagnosis {
    pub wrong_label: bool,
    pub wrong_overlap: bool,
}

/// Raw matching counts. Outcomes of several scenes add up into a pooled one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub wrong_label: usize,
    pub wrong_overlap: usize,
    /// Per false positive, in matching order.
    pub diagnoses: Vec<FpDiagnosis>,
}

impl MatchOutcome {
    pub fn merge(&mut self, other: &MatchOutcome) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.wrong_label += other.wrong_label;
        self.wrong_overlap += other.wrong_overlap;
        self.diagnoses.extend_from_slice(&other.diagnoses);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub wrong_label_fraction: f64,
    pub wrong_overlap_fraction: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_report(m: &MatchOutcome) -> EvalReport {
    let precision = ratio(m.tp, m.tp + m.fp);
    let recall = ratio(m.tp, m.tp + m.fn_);
    EvalReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        wrong_label_fraction: ratio(m.wrong_label, m.fp),
        wrong_overlap_fraction: ratio(m.wrong_overlap, m.fp),
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
    }
}

/// Nearest ancestor-or-self of `class` in `targets`, if any.
fn target_of(t: &Taxonomy, targets: &BTreeSet<ClassId>, class: ClassId) -> Result<Option<ClassId>> {
    let mut cur = Some(t.check(class)?);
    while let Some(c) = cur {
        if targets.contains(&c) {
            return Ok(Some(c));
        }
        cur = t.parent(c)?;
    }
    Ok(None)
}

fn check_targets(t: &Taxonomy, targets: &BTreeSet<ClassId>) -> Result<()> {
    for &a in targets {
        t.check(a)?;
    }
    for &a in targets {
        for &b in targets {
            if a != b && t.is_ancestor(a, b)? {
                return Err(Error::AmbiguousTargets(
                    t.name(a)?.to_string(),
                    t.name(b)?.to_string(),
                ));
            }
        }
    }
    Ok(())
}

/// Moves every prediction to its nearest target ancestor; predictions
/// without one are dropped.
pub fn relabel_to_parents(
    points: &[Prediction],
    t: &Taxonomy,
    targets: &BTreeSet<ClassId>,
) -> Result<Vec<Prediction>> {
    check_targets(t, targets)?;
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if let Some(class_id) = target_of(t, targets, p.class_id)? {
            out.push(Prediction { class_id, ..*p });
        }
    }
    Ok(out)
}

pub fn relabel_ground_truth(
    gt: &[GroundTruthObject],
    t: &Taxonomy,
    targets: &BTreeSet<ClassId>,
) -> Result<Vec<GroundTruthObject>> {
    check_targets(t, targets)?;
    let mut out = Vec::with_capacity(gt.len());
    for g in gt {
        if let Some(class_id) = target_of(t, targets, g.class_id)? {
            out.push(GroundTruthObject { class_id, ..*g });
        }
    }
    Ok(out)
}

/// Total order on predictions used for matching: score descending, then
/// class, then box coordinates. Makes the outcome independent of input order.
fn matching_order(a: &Prediction, b: &Prediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then_with(|| {
            let (x, y) = (a.bbox.to_array(), b.bbox.to_array());
            x.iter()
                .zip(&y)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Greedy one-to-one matching in descending score order.
pub fn match_detections(
    pred: &[Prediction],
    gt: &[GroundTruthObject],
    cfg: &EvalConfig,
) -> MatchOutcome {
    let thr = cfg.iou_threshold;
    let mut order: Vec<&Prediction> = pred.iter().collect();
    order.sort_by(|a, b| matching_order(a, b));
    let mut matched = vec![false; gt.len()];
    let mut out = MatchOutcome::default();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, obj) in gt.iter().enumerate() {
            if matched[g] || obj.class_id != p.class_id {
                continue;
            }
            let o = iou(&p.bbox, &obj.bbox);
            if o >= thr && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, _)) => {
                matched[g] = true;
                out.tp += 1;
            }
            None => {
                let mut wrong_label = false;
                let mut own_class_hit = false;
                for obj in gt {
                    if iou(&p.bbox, &obj.bbox) >= thr {
                        if obj.class_id == p.class_id {
                            own_class_hit = true;
                        } else {
                            wrong_label = true;
                        }
                    }
                }
                let d = FpDiagnosis {
                    wrong_label,
                    wrong_overlap: !own_class_hit,
                };
                out.fp += 1;
                out.wrong_label += d.wrong_label as usize;
                out.wrong_overlap += d.wrong_overlap as usize;
                out.diagnoses.push(d);
            }
        }
    }
    out.fn_ = matched.iter().filter(|m| !**m).count();
    out
}

/// Relabels (when configured) and matches one scene.
pub fn evaluate_predictions(
    pred: &[Prediction],
    gt: &[GroundTruthObject],
    t: &Taxonomy,
    cfg: &EvalConfig,
) -> Result<MatchOutcome> {
    cfg.validate()?;
    match &cfg.parent_relabel_targets {
        Some(targets) => {
            let pred = relabel_to_parents(pred, t, targets)?;
            let gt = relabel_ground_truth(gt, t, targets)?;
            Ok(match_detections(&pred, &gt, cfg))
        }
        None => Ok(match_detections(pred, gt, cfg)),
    }
}

/// Runs `method` on every scene and pools the matches in scene order.
pub fn evaluate_scenes(
    method: Method,
    cfg: &RunConfig,
    scenes: &[Scene],
    t: &Taxonomy,
) -> Result<EvalReport> {
    cfg.validate()?;
    let outcomes: Vec<MatchOutcome> = scenes
        .par_iter()
        .map(|scene| {
            let out = run_method(method, &scene.detections, t, cfg)?;
            evaluate_predictions(&out.predictions(), &scene.ground_truth, t, &cfg.eval)
        })
        .collect::<Result<_>>()?;
    let mut pooled = MatchOutcome::default();
    for o in &outcomes {
        pooled.merge(o);
    }
    Ok(compute_report(&pooled))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: EvalReport,
}

/// One pooled report per parameter value, all on the same scenes.
pub fn sweep(
    method: Method,
    base: &RunConfig,
    spec: &SweepSpec,
    scenes: &[Scene],
    t: &Taxonomy,
) -> Result<Vec<SweepPoint>> {
    if spec.values.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "sweep over {} has no values",
            spec.parameter
        )));
    }
    spec.values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            cfg.set_param(&spec.parameter, value)?;
            let report = evaluate_scenes(method, &cfg, scenes, t)?;
            Ok(SweepPoint { value, report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn pred(b: BoundingBox, c: usize, score: f64) -> Prediction {
        Prediction {
            bbox: b,
            class_id: ClassId(c),
            score,
        }
    }

    fn gt(b: BoundingBox, c: usize) -> GroundTruthObject {
        GroundTruthObject {
            bbox: b,
            class_id: ClassId(c),
        }
    }

    #[test]
    fn f1_examples() {
        assert!((f1_score(0.1344, 0.1347) - 0.1346).abs() < 1e-4);
        assert!((f1_score(0.1660, 0.1384) - 0.1509).abs() < 1e-4);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn perfect_detector() {
        let g = vec![
            gt(bx(0.0, 0.0, 10.0, 10.0), 1),
            gt(bx(20.0, 0.0, 30.0, 10.0), 2),
        ];
        let p: Vec<Prediction> = g.iter().map(|o| pred(o.bbox, o.class_id.0, 0.9)).collect();
        let r = compute_report(&match_detections(&p, &g, &EvalConfig::default()));
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 0));
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions() {
        let g = vec![gt(bx(0.0, 0.0, 10.0, 10.0), 1)];
        let r = compute_report(&match_detections(&[], &g, &EvalConfig::default()));
        assert_eq!((r.precision, r.recall, r.f1, r.fn_), (0.0, 0.0, 0.0, 1));
        assert_eq!(r.wrong_label_fraction, 0.0);
    }

    #[test]
    fn duplicate_is_neither_wrong_label_nor_wrong_overlap() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(50.0, 0.0, 60.0, 10.0);
        let g = vec![gt(a, 1), gt(b, 2)];
        let p = vec![
            pred(a, 1, 0.9),
            pred(b, 2, 0.8),
            pred(bx(1.0, 0.0, 11.0, 10.0), 1, 0.7),
        ];
        let m = match_detections(&p, &g, &EvalConfig::default());
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 0));
        assert_eq!(
            m.diagnoses,
            vec![FpDiagnosis {
                wrong_label: false,
                wrong_overlap: false
            }]
        );
    }

    #[test]
    fn diagnoses() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let g = vec![gt(a, 1)];
        let cfg = EvalConfig::default();
        // right place, wrong class
        let m = match_detections(&[pred(a, 2, 0.9)], &g, &cfg);
        assert_eq!(
            m.diagnoses[0],
            FpDiagnosis {
                wrong_label: true,
                wrong_overlap: true
            }
        );
        // right class, wrong place
        let m = match_detections(&[pred(bx(30.0, 30.0, 40.0, 40.0), 1, 0.9)], &g, &cfg);
        assert_eq!(
            m.diagnoses[0],
            FpDiagnosis {
                wrong_label: false,
                wrong_overlap: true
            }
        );
        let r = compute_report(&m);
        assert_eq!(
            (r.wrong_label_fraction, r.wrong_overlap_fraction),
            (0.0, 1.0)
        );
    }

    #[test]
    fn best_iou_ground_truth_is_taken() {
        let g = vec![
            gt(bx(0.0, 0.0, 10.0, 10.0), 1),
            gt(bx(2.0, 0.0, 12.0, 10.0), 1),
        ];
        let p = vec![
            pred(bx(2.0, 0.0, 12.0, 10.0), 1, 0.9),
            pred(bx(0.0, 0.0, 10.0, 10.0), 1, 0.8),
        ];
        let m = match_detections(&p, &g, &EvalConfig::default());
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = vec![gt(bx(0.0, 0.0, 10.0, 1.0), 1)];
        let p = vec![pred(bx(0.0, 0.0, 20.0, 1.0), 1, 0.9)];
        let m = match_detections(&p, &g, &EvalConfig::default());
        assert_eq!(m.tp, 1);
    }

    #[test]
    fn relabel_examples() {
        let t = fixtures::taxonomy();
        let dog = t.id_of("dog").unwrap();
        let targets = BTreeSet::from([dog]);
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let beagle = Prediction {
            bbox: b,
            class_id: t.id_of("beagle").unwrap(),
            score: 0.5,
        };
        let out = relabel_to_parents(&[beagle], &t, &targets).unwrap();
        assert_eq!(out[0].class_id, dog);
        let as_dog = Prediction {
            class_id: dog,
            ..beagle
        };
        assert_eq!(
            relabel_to_parents(&[as_dog], &t, &targets).unwrap(),
            vec![as_dog]
        );
        let car = Prediction {
            class_id: t.id_of("car").unwrap(),
            ..beagle
        };
        assert!(relabel_to_parents(&[car], &t, &targets).unwrap().is_empty());
        let nested = BTreeSet::from([dog, t.id_of("animal").unwrap()]);
        assert!(matches!(
            relabel_to_parents(&[beagle], &t, &nested),
            Err(Error::AmbiguousTargets(..))
        ));
    }

    #[test]
    fn nearest_target_wins_across_siblings() {
        let t = fixtures::taxonomy();
        let targets = BTreeSet::from([t.id_of("dog").unwrap(), t.id_of("cat").unwrap()]);
        let p = Prediction {
            bbox: bx(0.0, 0.0, 1.0, 1.0),
            class_id: t.id_of("siamese").unwrap(),
            score: 0.5,
        };
        assert_eq!(
            relabel_to_parents(&[p], &t, &targets).unwrap()[0].class_id,
            t.id_of("cat").unwrap()
        );
    }

    fn arb_scene() -> impl Strategy<Value = (Vec<Prediction>, Vec<GroundTruthObject>)> {
        let b = (0.0..40.0f64, 0.0..40.0f64, 2.0..20.0f64, 2.0..20.0f64)
            .prop_map(|(x, y, w, h)| BoundingBox::from_xywh(x, y, w, h).unwrap());
        (
            proptest::collection::vec((b.clone(), 0usize..3, 0.0..1.0f64), 0..12),
            proptest::collection::vec((b, 0usize..3), 0..8),
        )
            .prop_map(|(p, g)| {
                (
                    p.into_iter().map(|(b, c, s)| pred(b, c, s)).collect(),
                    g.into_iter().map(|(b, c)| gt(b, c)).collect(),
                )
            })
    }

    proptest! {
        #[test]
        fn counts_are_consistent((p, g) in arb_scene(), seed in any::<u64>()) {
            let cfg = EvalConfig::default();
            let m = match_detections(&p, &g, &cfg);
            prop_assert_eq!(m.tp + m.fn_, g.len());
            prop_assert_eq!(m.tp + m.fp, p.len());
            let mut shuffled = p.clone();
            let k = shuffled.len().max(1);
            shuffled.rotate_left((seed as usize) % k);
            shuffled.reverse();
            let m2 = match_detections(&shuffled, &g, &cfg);
            prop_assert_eq!((m.tp, m.fp, m.fn_), (m2.tp, m2.fp, m2.fn_));
            let r = compute_report(&m);
            for v in [r.precision, r.recall, r.f1, r.wrong_label_fraction, r.wrong_overlap_fraction] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
