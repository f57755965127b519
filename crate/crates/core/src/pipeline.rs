//! Method roster and the configuration shared by all of them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{ac_nms, wc_ac_nms, NmsParams};
use crate::candidates::{
    expand_detections, CandidateParams, CandidatePoint, CandidateSet, Detection,
};
use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, Prediction};
use crate::inference::{
    mapc_cluster, sapc_cluster, InferenceConfig, ObjectiveWeights, RegularizedResult,
};
use crate::similarity::{build_similarity_model, SimilarityParams};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mapc")]
    Mapc,
    #[serde(rename = "sapc")]
    Sapc,
    #[serde(rename = "sapc+acnms")]
    SapcAcNms,
    #[serde(rename = "wcacnms")]
    WcAcNms,
    #[serde(rename = "acnms")]
    AcNms,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mapc,
        Method::Sapc,
        Method::SapcAcNms,
        Method::WcAcNms,
        Method::AcNms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mapc => "mapc",
            Method::Sapc => "sapc",
            Method::SapcAcNms => "sapc+acnms",
            Method::WcAcNms => "wcacnms",
            Method::AcNms => "acnms",
        }
    }

    pub fn is_clustering(self) -> bool {
        matches!(self, Method::Mapc | Method::Sapc | Method::SapcAcNms)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// Everything a method run needs besides its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub similarity: SimilarityParams,
    pub top_k: usize,
    pub top_n: Option<usize>,
    pub weights: ObjectiveWeights,
    pub inference: InferenceConfig,
    pub nms: NmsParams,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = CandidateParams::default();
        Self {
            similarity: SimilarityParams::default(),
            top_k: c.top_k,
            top_n: c.top_n,
            weights: ObjectiveWeights::default(),
            inference: InferenceConfig::default(),
            nms: NmsParams::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Names accepted by [`RunConfig::set_param`], in canonical order.
pub const PARAM_NAMES: [&str; 14] = [
    "lambda",
    "theta_bg",
    "w_a",
    "w_b",
    "w_c",
    "w_d",
    "w_e",
    "w_f",
    "damping",
    "iou_within",
    "iou_across",
    "iou_threshold",
    "top_k",
    "max_iterations",
];

impl RunConfig {
    pub fn candidate_params(&self) -> CandidateParams {
        CandidateParams {
            theta_bg: self.similarity.theta_bg,
            top_k: self.top_k,
            top_n: self.top_n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()?;
        self.candidate_params().validate()?;
        self.weights.validate()?;
        self.inference.validate()?;
        self.nms.validate()?;
        self.eval.validate()
    }

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "lambda" => &mut self.similarity.lambda,
            "theta_bg" => &mut self.similarity.theta_bg,
            "w_a" => &mut self.weights.w_a,
            "w_b" => &mut self.weights.w_b,
            "w_c" => &mut self.weights.w_c,
            "w_d" => &mut self.weights.w_d,
            "w_e" => &mut self.weights.w_e,
            "w_f" => &mut self.weights.w_f,
            "damping" => &mut self.inference.damping,
            "iou_within" => &mut self.nms.iou_within,
            "iou_across" => &mut self.nms.iou_across,
            "iou_threshold" => &mut self.eval.iou_threshold,
            _ => return None,
        })
    }

    /// Sets one named knob. Integer knobs reject fractional values.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        if let Some(slot) = self.slot(name) {
            *slot = value;
            return Ok(());
        }
        let target = match name {
            "top_k" => &mut self.top_k,
            "max_iterations" => &mut self.inference.max_iterations,
            _ => return Err(Error::UnknownParameter(name.to_string())),
        };
        if value.fract() != 0.0 || value < 0.0 || !value.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "{name} needs a non-negative integer, got {value}"
            )));
        }
        *target = value as usize;
        Ok(())
    }

    pub fn get_param(&self, name: &str) -> Result<f64> {
        match name {
            "top_k" => return Ok(self.top_k as f64),
            "max_iterations" => return Ok(self.inference.max_iterations as f64),
            _ => {}
        }
        let mut copy = self.clone();
        copy.slot(name)
            .map(|v| *v)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn with_params(&self, params: &BTreeMap<String, f64>) -> Result<Self> {
        let mut cfg = self.clone();
        for (k, v) in params {
            cfg.set_param(k, *v)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub method: Method,
    pub candidates: CandidateSet,
    /// Final detections in point order.
    pub selected: Vec<CandidatePoint>,
    /// Clustering state, for the clustering methods.
    pub clustering: Option<RegularizedResult>,
}

impl MethodOutput {
    pub fn predictions(&self) -> Vec<Prediction> {
        self.selected
            .iter()
            .map(|p| Prediction {
                bbox: self.candidates.boxes[p.box_id],
                class_id: p.class_id,
                score: p.score,
            })
            .collect()
    }

    /// Number of points represented by the exemplar `point_id`, itself included.
    pub fn cluster_size(&self, point_id: usize) -> Option<usize> {
        let c = self.clustering.as_ref()?;
        Some(
            c.assignment
                .0
                .iter()
                .filter(|a| **a == Some(point_id))
                .count(),
        )
    }
}

/// Highest-scoring class of every box.
fn top_label_per_box(cands: &CandidateSet) -> Vec<CandidatePoint> {
    let mut out: Vec<CandidatePoint> = Vec::new();
    for p in &cands.points {
        match out.last() {
            Some(last) if last.box_id == p.box_id => {}
            _ => out.push(*p),
        }
    }
    out
}

fn candidates_or_empty(dets: &[Detection], params: &CandidateParams) -> Result<CandidateSet> {
    match expand_detections(dets, params) {
        Err(Error::EmptyCandidateSet) => Ok(CandidateSet {
            points: Vec::new(),
            boxes: dets.iter().map(|d| d.bbox).collect(),
            source_count: dets.iter().map(|d| d.scores.len()).sum(),
        }),
        other => other,
    }
}

fn select(result: &RegularizedResult, cands: &CandidateSet) -> Vec<CandidatePoint> {
    result
        .selected
        .iter()
        .map(|s| cands.points[s.point_id])
        .collect()
}

/// Runs one method end to end on a scene's detections.
pub fn run_method(
    method: Method,
    dets: &[Detection],
    t: &Taxonomy,
    cfg: &RunConfig,
) -> Result<MethodOutput> {
    cfg.validate()?;
    for d in dets {
        for c in d.scores.keys() {
            t.check(*c)?;
        }
    }
    let cands = candidates_or_empty(dets, &cfg.candidate_params())?;
    let (selected, clustering) = match method {
        Method::Mapc => {
            let model = build_similarity_model(&cands, t, &cfg.similarity)?;
            let r = mapc_cluster(&cands, &model, &cfg.weights, &cfg.inference)?;
            (select(&r, &cands), Some(r))
        }
        Method::Sapc => {
            let r = sapc_cluster(&cands, &cfg.similarity, &cfg.weights, &cfg.inference)?;
            (select(&r, &cands), Some(r))
        }
        Method::SapcAcNms => {
            let r = sapc_cluster(&cands, &cfg.similarity, &cfg.weights, &cfg.inference)?;
            (
                ac_nms(&select(&r, &cands), &cands.boxes, cfg.nms.iou_across),
                Some(r),
            )
        }
        Method::WcAcNms => (
            wc_ac_nms(&top_label_per_box(&cands), &cands.boxes, &cfg.nms),
            None,
        ),
        Method::AcNms => (
            ac_nms(&top_label_per_box(&cands), &cands.boxes, cfg.nms.iou_across),
            None,
        ),
    };
    Ok(MethodOutput {
        method,
        candidates: cands,
        selected,
        clustering,
    })
}
