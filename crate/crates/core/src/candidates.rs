//! Detector output and its expansion into box-class candidate points.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::taxonomy::ClassId;

/// A detector proposal: one box with a confidence per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub scores: BTreeMap<ClassId, f64>,
}

impl Detection {
    pub fn new(
        bbox: BoundingBox,
        scores: impl IntoIterator<Item = (ClassId, f64)>,
    ) -> Result<Self> {
        let det = Self {
            bbox,
            scores: scores.into_iter().collect(),
        };
        det.validate()?;
        Ok(det)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::InvalidDetection(
                "detection carries no class scores".into(),
            ));
        }
        if let Some((c, s)) = self
            .scores
            .iter()
            .find(|(_, s)| !s.is_finite() || !(0.0..=1.0).contains(*s))
        {
            return Err(Error::InvalidDetection(format!(
                "score {s} for class {c} outside [0, 1]"
            )));
        }
        Ok(())
    }
}

/// One box-class hypothesis; the unit the clustering reasons over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePoint {
    pub point_id: usize,
    pub box_id: usize,
    pub class_id: ClassId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub points: Vec<CandidatePoint>,
    /// Every input box, indexed by `box_id`, including boxes left without points.
    pub boxes: Vec<BoundingBox>,
    /// Number of (box, class) score entries seen before filtering.
    pub source_count: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn box_of(&self, point: &CandidatePoint) -> &BoundingBox {
        &self.boxes[point.box_id]
    }

    pub fn box_ids(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.box_id).collect()
    }

    /// Builds a set from explicit points, renumbering point ids densely.
    pub fn from_points(boxes: Vec<BoundingBox>, points: Vec<CandidatePoint>) -> Result<Self> {
        let points: Vec<CandidatePoint> = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| CandidatePoint { point_id: i, ..p })
            .collect();
        if let Some(p) = points.iter().find(|p| p.box_id >= boxes.len()) {
            return Err(Error::InvalidDetection(format!(
                "point references missing box {}",
                p.box_id
            )));
        }
        let source_count = points.len();
        Ok(Self {
            points,
            boxes,
            source_count,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateParams {
    pub theta_bg: f64,
    /// Highest-scoring classes kept per box.
    pub top_k: usize,
    /// Image-wide cap applied after the per-box cut.
    pub top_n: Option<usize>,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self {
            theta_bg: 0.2,
            top_k: 5,
            top_n: Some(100),
        }
    }
}

impl CandidateParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta_bg) {
            return Err(Error::InvalidConfig(format!(
                "theta_bg {} outside [0, 1)",
                self.theta_bg
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.top_n == Some(0) {
            return Err(Error::InvalidConfig("top_n must be at least 1".into()));
        }
        Ok(())
    }
}

fn by_score_desc(a: &(ClassId, f64), b: &(ClassId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Expands detections into candidate points.
///
/// Points are ordered by box, then descending score, then ascending class id,
/// and numbered in that order. Only scores strictly above `theta_bg` survive.
pub fn expand_detections(dets: &[Detection], params: &CandidateParams) -> Result<CandidateSet> {
    params.validate()?;
    let mut per_box: Vec<Vec<(ClassId, f64)>> = Vec::with_capacity(dets.len());
    let mut source_count = 0;
    for det in dets {
        det.validate()?;
        source_count += det.scores.len();
        let mut kept: Vec<(ClassId, f64)> = det
            .scores
            .iter()
            .filter(|(_, s)| **s > params.theta_bg)
            .map(|(c, s)| (*c, *s))
            .collect();
        kept.sort_by(by_score_desc);
        kept.truncate(params.top_k);
        per_box.push(kept);
    }

    if let Some(cap) = params.top_n {
        let mut all: Vec<(usize, ClassId, f64)> = per_box
            .iter()
            .enumerate()
            .flat_map(|(b, kept)| kept.iter().map(move |(c, s)| (b, *c, *s)))
            .collect();
        if all.len() > cap {
            all.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
            let cutoff: std::collections::BTreeSet<(usize, ClassId)> =
                all[..cap].iter().map(|(b, c, _)| (*b, *c)).collect();
            for (b, kept) in per_box.iter_mut().enumerate() {
                kept.retain(|(c, _)| cutoff.contains(&(b, *c)));
            }
        }
    }

    let points: Vec<CandidatePoint> = per_box
        .iter()
        .enumerate()
        .flat_map(|(box_id, kept)| {
            kept.iter()
                .map(move |(class_id, score)| (box_id, *class_id, *score))
        })
        .enumerate()
        .map(|(point_id, (box_id, class_id, score))| CandidatePoint {
            point_id,
            box_id,
            class_id,
            score,
        })
        .collect();

    if points.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    Ok(CandidateSet {
        points,
        boxes: dets.iter().map(|d| d.bbox).collect(),
        source_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DOG: ClassId = ClassId(1);
    const CAT: ClassId = ClassId(2);
    const CAR: ClassId = ClassId(3);

    fn det(scores: &[(ClassId, f64)]) -> Detection {
        Detection::new(
            BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            scores.iter().copied(),
        )
        .unwrap()
    }

    fn params(theta_bg: f64, top_k: usize) -> CandidateParams {
        CandidateParams {
            theta_bg,
            top_k,
            top_n: None,
        }
    }

    #[test]
    fn single_survivor() {
        let c = expand_detections(&[det(&[(DOG, 0.9)])], &params(0.5, 3)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.points[0].class_id, DOG);
    }

    #[test]
    fn filtered_out() {
        assert_eq!(
            expand_detections(&[det(&[(DOG, 0.4)])], &params(0.5, 3)),
            Err(Error::EmptyCandidateSet)
        );
        assert_eq!(
            expand_detections(&[], &params(0.5, 3)),
            Err(Error::EmptyCandidateSet)
        );
    }

    #[test]
    fn threshold_then_truncate() {
        let c = expand_detections(
            &[det(&[(DOG, 0.9), (CAT, 0.8), (CAR, 0.6)])],
            &params(0.7, 2),
        )
        .unwrap();
        let classes: Vec<ClassId> = c.points.iter().map(|p| p.class_id).collect();
        assert_eq!(classes, vec![DOG, CAT]);
    }

    #[test]
    fn threshold_is_strict() {
        assert!(expand_detections(&[det(&[(DOG, 0.5)])], &params(0.5, 3)).is_err());
    }

    #[test]
    fn ties_break_by_class_id() {
        let c = expand_detections(&[det(&[(CAR, 0.8), (DOG, 0.8)])], &params(0.1, 5)).unwrap();
        assert_eq!(c.points[0].class_id, DOG);
        assert_eq!(c.points[1].class_id, CAR);
    }

    #[test]
    fn global_cap_keeps_highest_scores_in_box_order() {
        let dets = [
            det(&[(DOG, 0.3), (CAT, 0.9)]),
            det(&[(DOG, 0.8), (CAR, 0.5)]),
        ];
        let c = expand_detections(
            &dets,
            &CandidateParams {
                theta_bg: 0.1,
                top_k: 5,
                top_n: Some(2),
            },
        )
        .unwrap();
        let kept: Vec<(usize, ClassId)> = c.points.iter().map(|p| (p.box_id, p.class_id)).collect();
        assert_eq!(kept, vec![(0, CAT), (1, DOG)]);
        assert_eq!(c.boxes.len(), 2);
        assert_eq!(c.source_count, 4);
    }

    #[test]
    fn invalid_params_and_scores() {
        assert!(expand_detections(&[det(&[(DOG, 0.9)])], &params(1.0, 3)).is_err());
        assert!(expand_detections(&[det(&[(DOG, 0.9)])], &params(0.2, 0)).is_err());
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Detection::new(b, [(DOG, 1.5)]).is_err());
        assert!(Detection::new(b, []).is_err());
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        proptest::collection::vec(
            proptest::collection::btree_map((0usize..6).prop_map(ClassId), 0.0f64..=1.0, 1..5),
            0..8,
        )
        .prop_map(|maps| {
            maps.into_iter()
                .enumerate()
                .map(|(i, scores)| {
                    let x = i as f64 * 3.0;
                    Detection::new(BoundingBox::new(x, 0.0, x + 5.0, 5.0).unwrap(), scores).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn expansion_invariants(dets in arb_dets(), theta in 0.0f64..0.9, k in 1usize..4) {
            let p = params(theta, k);
            match expand_detections(&dets, &p) {
                Ok(c) => {
                    prop_assert!(c.len() <= dets.len() * k);
                    for (i, pt) in c.points.iter().enumerate() {
                        prop_assert_eq!(pt.point_id, i);
                        prop_assert!(pt.score > theta);
                    }
                    prop_assert_eq!(expand_detections(&dets, &p).unwrap(), c);
                }
                Err(e) => prop_assert_eq!(e, Error::EmptyCandidateSet),
            }
        }
    }
}
