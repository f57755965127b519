//! Exemplar selection by max-sum message passing.
//!
//! The multi-class problem is a factor graph over binary variables `c_ij`
//! ("point `i` is represented by exemplar `j`") plus one background variable
//! per point. Factors:
//!
//! * `S`: unary, `w_a s(i,i)` on the diagonal and `w_b s(i,j)` elsewhere;
//!   the background variable carries `w_b s_bg` with `s_bg = 0`.
//! * `I~_i`: exactly one of `c_i1..c_iN, bg_i` is on.
//! * `E_j`: if any `c_ij` (`i != j`) is on then `c_jj` must be on.
//! * `R_ij`: pairwise on `(c_ii, c_jj)`, `w_d r(i,j)` when both are on.
//! * `E~_k`: at most one diagonal variable of box `k` is on.
//!
//! Binary max-sum messages are stored as log-odds differences (value at 1
//! minus value at 0), as in the binary formulation of affinity propagation.

mod apc;
mod max_sum;
mod sapc;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::similarity::SimilarityModel;
use crate::taxonomy::ClassId;

pub use apc::{apc_cluster, apc_objective_value};
pub use max_sum::{mapc_cluster, run_max_sum};
pub use sapc::sapc_cluster;

/// Weights of the linearly combined objective.
///
/// `w_c` and `w_e` scale constraint terms that are either `0` or `-inf`, so
/// any positive value behaves the same. `w_f = 0` switches the
/// one-exemplar-per-box constraint off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    pub w_a: f64,
    pub w_b: f64,
    pub w_c: f64,
    pub w_d: f64,
    pub w_e: f64,
    pub w_f: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w_a: 0.2,
            w_b: 1.0,
            w_c: 1.0,
            w_d: 0.05,
            w_e: 1.0,
            w_f: 1.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_a, self.w_b, self.w_c, self.w_d, self.w_e, self.w_f];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "objective weights must be finite and non-negative: {self:?}"
            )));
        }
        if self.w_c <= 0.0 || self.w_e <= 0.0 {
            return Err(Error::InvalidConfig("w_c and w_e must be positive".into()));
        }
        Ok(())
    }

    pub fn box_constraint(&self) -> bool {
        self.w_f > 0.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            w_a: self.w_a * k,
            w_b: self.w_b * k,
            w_c: self.w_c * k,
            w_d: self.w_d * k,
            w_e: self.w_e * k,
            w_f: self.w_f * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub damping: f64,
    pub max_iterations: usize,
    /// Iterations the decoded exemplar set must stay unchanged. Messages
    /// start at zero, so the empty set is stable early on; heavier damping
    /// needs a longer window.
    pub convergence_window: usize,
    pub trace_enabled: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            damping: 0.7,
            max_iterations: 200,
            convergence_window: 15,
            trace_enabled: false,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!(
                "damping {} outside [0, 1)",
                self.damping
            )));
        }
        if self.max_iterations == 0 || self.convergence_window == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations and convergence_window must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Row-functional encoding of the binary assignment variables: entry `i`
/// is the exemplar of point `i`, or `None` for the background cluster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(pub Vec<Option<usize>>);

/// The distinguished background label.
pub const BACKGROUND: Option<usize> = None;

/// First constraint an assignment breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    /// Label points outside `0..n`.
    OutOfRange { point: usize },
    /// Point joins `exemplar`, which is not its own exemplar.
    ExemplarNotSelf { point: usize, exemplar: usize },
    /// Two points of one box are both exemplars.
    BoxConflict { box_id: usize },
}

impl Assignment {
    pub fn all_background(n: usize) -> Self {
        Self(vec![BACKGROUND; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.0[i]
    }

    pub fn is_exemplar(&self, i: usize) -> bool {
        self.0[i] == Some(i)
    }

    pub fn exemplars(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_exemplar(i)).collect()
    }

    pub fn exemplar_set(&self) -> BTreeSet<usize> {
        self.exemplars().into_iter().collect()
    }

    /// Checks the exemplar-consistency constraint and, when `box_ids` is
    /// given, the one-exemplar-per-box constraint.
    pub fn violation(&self, box_ids: Option<&[usize]>) -> Option<Violation> {
        let n = self.len();
        for (i, a) in self.0.iter().enumerate() {
            if let Some(j) = *a {
                if j >= n {
                    return Some(Violation::OutOfRange { point: i });
                }
                if j != i && self.0[j] != Some(j) {
                    return Some(Violation::ExemplarNotSelf {
                        point: i,
                        exemplar: j,
                    });
                }
            }
        }
        if let Some(boxes) = box_ids {
            let mut seen = BTreeSet::new();
            for i in self.exemplars() {
                if !seen.insert(boxes[i]) {
                    return Some(Violation::BoxConflict { box_id: boxes[i] });
                }
            }
        }
        None
    }

    pub fn is_valid(&self, box_ids: Option<&[usize]>) -> bool {
        self.violation(box_ids).is_none()
    }
}

/// Weighted objective. `-inf` when a hard constraint is violated.
///
/// `box_ids[i]` is the box of point `i`; it is only consulted when
/// `w.w_f > 0`.
pub fn objective_value(
    a: &Assignment,
    m: &SimilarityModel,
    w: &ObjectiveWeights,
    box_ids: &[usize],
) -> Result<f64> {
    let n = m.n();
    if a.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.len(),
        });
    }
    if box_ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: box_ids.len(),
        });
    }
    if let Some(Violation::OutOfRange { point }) = a.violation(None) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.get(point).unwrap_or(0) + 1,
        });
    }
    let boxes = w.box_constraint().then_some(box_ids);
    if !a.is_valid(boxes) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut self_term = 0.0;
    let mut join_term = 0.0;
    for i in 0..n {
        match a.get(i) {
            Some(j) if j == i => self_term += m.self_sim(i),
            Some(j) => join_term += m.pair(i, j),
            None => {}
        }
    }
    let ex = a.exemplars();
    let mut repel_term = 0.0;
    for (x, &i) in ex.iter().enumerate() {
        for &j in &ex[x + 1..] {
            repel_term += m.repellence(i, j);
        }
    }
    Ok(w.w_a * self_term + w.w_b * join_term + w.w_d * repel_term)
}

/// Output of a clustering run on a similarity model.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignment: Assignment,
    pub objective_value: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Snapshot 0 is all-background; snapshot `t` is the decode after iteration `t`.
    pub trace: Option<Vec<Assignment>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedDetection {
    pub point_id: usize,
    pub box_id: usize,
    pub class_id: ClassId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedResult {
    /// Self-assigned points, in point order.
    pub selected: Vec<SelectedDetection>,
    pub assignment: Assignment,
    pub objective_value: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub trace: Option<Vec<Assignment>>,
}

impl RegularizedResult {
    pub fn from_clustering(c: Clustering, cands: &CandidateSet) -> Self {
        let selected = c
            .assignment
            .exemplars()
            .into_iter()
            .map(|i| {
                let p = &cands.points[i];
                SelectedDetection {
                    point_id: p.point_id,
                    box_id: p.box_id,
                    class_id: p.class_id,
                    score: p.score,
                }
            })
            .collect();
        Self {
            selected,
            assignment: c.assignment,
            objective_value: c.objective_value,
            iterations_run: c.iterations_run,
            converged: c.converged,
            trace: c.trace,
        }
    }

    /// Result for an input with no surviving candidates.
    pub fn empty() -> Self {
        Self {
            selected: Vec::new(),
            assignment: Assignment(Vec::new()),
            objective_value: 0.0,
            iterations_run: 0,
            converged: true,
            trace: None,
        }
    }
}

pub fn iteration_trace(result: &RegularizedResult) -> Result<&[Assignment]> {
    result.trace.as_deref().ok_or(Error::TraceDisabled)
}

/// Tracks the decoded exemplar sets and reports when the last `window`
/// decodes agree.
#[derive(Debug)]
struct ConvergenceMonitor {
    window: usize,
    last: Option<BTreeSet<usize>>,
    stable: usize,
}

impl ConvergenceMonitor {
    fn new(window: usize) -> Self {
        Self {
            window,
            last: None,
            stable: 0,
        }
    }

    fn observe(&mut self, exemplars: BTreeSet<usize>) -> bool {
        if self.last.as_ref() == Some(&exemplars) {
            self.stable += 1;
        } else {
            self.stable = 1;
            self.last = Some(exemplars);
        }
        self.stable >= self.window
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::similarity::{SimilarityParams, SquareMatrix};

    fn model(pair: Vec<Vec<f64>>, selfs: Vec<f64>) -> SimilarityModel {
        SimilarityModel::from_parts(SquareMatrix::from_rows(pair).unwrap(), selfs).unwrap()
    }

    #[test]
    fn single_point_objective() {
        let m = model(vec![vec![0.0]], vec![-1.5]);
        let w = ObjectiveWeights {
            w_a: 2.0,
            ..Default::default()
        };
        assert_eq!(
            objective_value(&Assignment(vec![Some(0)]), &m, &w, &[0]).unwrap(),
            -3.0
        );
        assert_eq!(
            objective_value(&Assignment(vec![None]), &m, &w, &[0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn constraint_violations_are_neg_infinity() {
        let m = model(vec![vec![0.0, 0.5], vec![0.5, 0.0]], vec![-1.0, -1.0]);
        let w = ObjectiveWeights::default();
        let v = objective_value(&Assignment(vec![Some(1), None]), &m, &w, &[0, 1]).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
        let v = objective_value(&Assignment(vec![Some(0), Some(1)]), &m, &w, &[0, 0]).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
        // Without the box constraint the same assignment is finite.
        let off = ObjectiveWeights { w_f: 0.0, ..w };
        assert!(
            objective_value(&Assignment(vec![Some(0), Some(1)]), &m, &off, &[0, 0])
                .unwrap()
                .is_finite()
        );
    }

    #[test]
    fn dimension_mismatch() {
        let m = model(vec![vec![0.0]], vec![-1.0]);
        let w = ObjectiveWeights::default();
        assert!(matches!(
            objective_value(&Assignment(vec![None, None]), &m, &w, &[0, 0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            objective_value(&Assignment(vec![Some(3)]), &m, &w, &[0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn three_point_hand_evaluation() {
        // pair(0,1) = 0.4, others 0; selfs -1/0.7, -1/0.6, -1/0.5.
        let (cands, t) = fixtures::three_point();
        let p = SimilarityParams {
            lambda: 0.6,
            theta_bg: 0.2,
        };
        let m = crate::similarity::build_similarity_model(&cands, &t, &p).unwrap();
        let w = ObjectiveWeights {
            w_a: 0.5,
            w_b: 2.0,
            w_c: 1.0,
            w_d: 0.25,
            w_e: 1.0,
            w_f: 1.0,
        };
        // 1 joins 0; 0 and 2 are exemplars.
        let a = Assignment(vec![Some(0), Some(0), Some(2)]);
        let expected = 0.5 * (-1.0 / 0.7 - 1.0 / 0.5) + 2.0 * 0.4 + 0.25 * -(0.0 + 1.0);
        let got = objective_value(&a, &m, &w, &cands.box_ids()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn weights_validation() {
        assert!(ObjectiveWeights::default().validate().is_ok());
        assert!(ObjectiveWeights {
            w_a: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ObjectiveWeights {
            w_c: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ObjectiveWeights {
            w_d: f64::NAN,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(InferenceConfig {
            damping: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(InferenceConfig {
            convergence_window: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn trace_disabled_is_an_error() {
        assert_eq!(
            iteration_trace(&RegularizedResult::empty()),
            Err(Error::TraceDisabled)
        );
    }

    #[test]
    fn violation_kinds() {
        let a = Assignment(vec![Some(1), Some(2), None]);
        assert_eq!(
            a.violation(None),
            Some(Violation::ExemplarNotSelf {
                point: 0,
                exemplar: 1
            })
        );
        let b = Assignment(vec![Some(0), Some(1), Some(0)]);
        assert_eq!(
            b.violation(Some(&[3, 3, 4])),
            Some(Violation::BoxConflict { box_id: 3 })
        );
        assert!(b.is_valid(Some(&[3, 4, 4])));
    }
}
