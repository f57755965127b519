//! Exhaustive maximisation of the objective for small instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::inference::{apc_objective_value, objective_value, Assignment, ObjectiveWeights};
use crate::similarity::SimilarityModel;

pub const MAX_ORACLE_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_assignment: Assignment,
    pub best_value: f64,
    pub enumerated_count: usize,
}

/// Exemplar masks in increasing order; with `box_ids`, masks holding two
/// exemplars on one box are skipped.
fn exemplar_masks(n: usize, box_ids: Option<&[usize]>) -> Vec<u32> {
    (0u32..1 << n)
        .filter(|&mask| match box_ids {
            None => true,
            Some(boxes) => {
                let mut seen = Vec::new();
                (0..n).filter(|i| mask >> i & 1 == 1).all(|i| {
                    let fresh = !seen.contains(&boxes[i]);
                    seen.push(boxes[i]);
                    fresh
                })
            }
        })
        .collect()
}

/// All assignments sharing one exemplar mask. Non-exemplars are odometer
/// digits over `[background, exemplars ascending]` (or exemplars only),
/// the lowest point id being the most significant digit.
struct MaskAssignments {
    free: Vec<usize>,
    choices: Vec<Option<usize>>,
    digits: Vec<usize>,
    current: Vec<Option<usize>>,
    done: bool,
}

impl MaskAssignments {
    fn new(n: usize, mask: u32, allow_background: bool) -> Self {
        let exemplars: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let free: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 0).collect();
        let mut choices: Vec<Option<usize>> = Vec::new();
        if allow_background {
            choices.push(None);
        }
        choices.extend(exemplars.iter().map(|&j| Some(j)));
        let mut current = vec![None; n];
        for &j in &exemplars {
            current[j] = Some(j);
        }
        let done = !free.is_empty() && choices.is_empty();
        if !done {
            for &i in &free {
                current[i] = choices[0];
            }
        }
        Self {
            digits: vec![0; free.len()],
            free,
            choices,
            current,
            done,
        }
    }
}

impl Iterator for MaskAssignments {
    type Item = Assignment;

    fn next(&mut self) -> Option<Assignment> {
        if self.done {
            return None;
        }
        let out = Assignment(self.current.clone());
        let k = self.choices.len();
        let mut pos = self.free.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            self.digits[pos] += 1;
            if self.digits[pos] < k {
                self.current[self.free[pos]] = self.choices[self.digits[pos]];
                break;
            }
            self.digits[pos] = 0;
            self.current[self.free[pos]] = self.choices[0];
        }
        Some(out)
    }
}

fn check_size(n: usize) -> Result<()> {
    if n > MAX_ORACLE_POINTS {
        return Err(Error::InstanceTooLarge {
            n,
            limit: MAX_ORACLE_POINTS,
        });
    }
    Ok(())
}

/// Every assignment satisfying the exactly-one, exemplar-consistency and
/// (when `box_ids` is given) one-exemplar-per-box constraints.
pub fn enumerate_valid_assignments(
    n: usize,
    box_ids: Option<&[usize]>,
) -> Result<impl Iterator<Item = Assignment>> {
    enumerate_with(n, box_ids, true)
}

/// As [`enumerate_valid_assignments`]; `allow_background = false` yields the
/// classic constraint set where every point joins an exemplar.
pub fn enumerate_with(
    n: usize,
    box_ids: Option<&[usize]>,
    allow_background: bool,
) -> Result<impl Iterator<Item = Assignment>> {
    check_size(n)?;
    if let Some(b) = box_ids {
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: b.len(),
            });
        }
    }
    let masks = exemplar_masks(n, box_ids);
    Ok(masks
        .into_iter()
        .flat_map(move |mask| MaskAssignments::new(n, mask, allow_background)))
}

/// Best (value, enumeration index, assignment) within each mask, reduced
/// to the first maximum in enumeration order.
fn search(
    n: usize,
    box_ids: Option<&[usize]>,
    allow_background: bool,
    value: impl Fn(&Assignment) -> Result<f64> + Sync,
) -> Result<OracleResult> {
    check_size(n)?;
    let masks = exemplar_masks(n, box_ids);
    let per_mask: Vec<(usize, Option<(f64, Assignment)>)> = masks
        .par_iter()
        .map(|&mask| {
            let mut count = 0;
            let mut best: Option<(f64, Assignment)> = None;
            for a in MaskAssignments::new(n, mask, allow_background) {
                count += 1;
                let v = value(&a)?;
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, a));
                }
            }
            Ok((count, best))
        })
        .collect::<Result<_>>()?;
    let mut enumerated_count = 0;
    let mut best: Option<(f64, Assignment)> = None;
    for (count, cand) in per_mask {
        enumerated_count += count;
        if let Some((v, a)) = cand {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, a));
            }
        }
    }
    let (best_value, best_assignment) = best.ok_or(Error::EmptyCandidateSet)?;
    Ok(OracleResult {
        best_assignment,
        best_value,
        enumerated_count,
    })
}

/// Exact maximiser of the weighted objective; ties go to the earliest
/// assignment in enumeration order.
pub fn brute_force_regularize(
    cands: &CandidateSet,
    m: &SimilarityModel,
    w: &ObjectiveWeights,
) -> Result<OracleResult> {
    w.validate()?;
    let n = m.n();
    if cands.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: cands.len(),
        });
    }
    let box_ids = cands.box_ids();
    let boxes = w.box_constraint().then_some(box_ids.as_slice());
    search(n, boxes, true, |a| objective_value(a, m, w, &box_ids))
}

/// Exact maximiser of the classic objective without background.
pub fn brute_force_apc(m: &SimilarityModel) -> Result<OracleResult> {
    if m.n() == 0 {
        return Err(Error::EmptyCandidateSet);
    }
    search(m.n(), None, false, |a| apc_objective_value(a, m))
}
