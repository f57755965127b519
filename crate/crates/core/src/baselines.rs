//! Greedy non-maximum suppression baselines.

use serde::{Deserialize, Serialize};

use crate::candidates::CandidatePoint;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsParams {
    pub iou_within: f64,
    pub iou_across: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        Self {
            iou_within: 0.5,
            iou_across: 0.3,
        }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iou_within", self.iou_within),
            ("iou_across", self.iou_across),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Keeps a point unless an already kept point (of the same class when
/// `class_scoped`) overlaps it with IoU strictly above `threshold`.
///
/// Points are visited by descending score, ties by lower point id; the
/// survivors are returned in their input order.
pub fn greedy_nms(
    points: &[CandidatePoint],
    boxes: &[BoundingBox],
    threshold: f64,
    class_scoped: bool,
) -> Vec<CandidatePoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .score
            .total_cmp(&points[a].score)
            .then(points[a].point_id.cmp(&points[b].point_id))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let p = &points[i];
        let suppressed = kept.iter().any(|&k| {
            let q = &points[k];
            (!class_scoped || q.class_id == p.class_id)
                && iou(&boxes[q.box_id], &boxes[p.box_id]) > threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| points[i]).collect()
}

/// Within-class suppression followed by across-class suppression.
pub fn wc_ac_nms(
    points: &[CandidatePoint],
    boxes: &[BoundingBox],
    params: &NmsParams,
) -> Vec<CandidatePoint> {
    let within = greedy_nms(points, boxes, params.iou_within, true);
    greedy_nms(&within, boxes, params.iou_across, false)
}

pub fn ac_nms(
    points: &[CandidatePoint],
    boxes: &[BoundingBox],
    threshold: f64,
) -> Vec<CandidatePoint> {
    greedy_nms(points, boxes, threshold, false)
}
