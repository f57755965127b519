use std::collections::BTreeMap;

use super::{
    objective_value, Assignment, Clustering, ConvergenceMonitor, InferenceConfig, ObjectiveWeights,
    RegularizedResult,
};
use crate::candidates::CandidateSet;
use crate::error::{Error, Result};
use crate::similarity::SimilarityModel;

/// Message state of one run. All messages are log-odds differences and
/// start at zero.
struct Messages {
    n: usize,
    /// Variable `c_ij` to factor `E_j`, row-major by `i`.
    rho: Vec<f64>,
    /// Factor `E_j` to variable `c_ij`, row-major by `i`.
    alpha: Vec<f64>,
    /// `psi[j * n + l]`: factor `R_jl` to variable `c_jj`.
    psi: Vec<f64>,
    /// Factor `E~_box(j)` to variable `c_jj`.
    tau: Vec<f64>,
}

impl Messages {
    fn new(n: usize) -> Self {
        Self {
            n,
            rho: vec![0.0; n * n],
            alpha: vec![0.0; n * n],
            psi: vec![0.0; n * n],
            tau: vec![0.0; n],
        }
    }

    /// Sum of the repellence and box-factor messages into `c_jj`.
    fn diagonal_extra(&self, j: usize) -> f64 {
        let row = &self.psi[j * self.n..(j + 1) * self.n];
        row.iter().sum::<f64>() + self.tau[j]
    }

    fn belief(&self, j: usize) -> f64 {
        self.rho[j * self.n + j] + self.alpha[j * self.n + j]
    }
}

const TIE_BREAK: f64 = 1e-9;

#[inline]
fn damp(old: f64, new: f64, damping: f64) -> f64 {
    damping * old + (1.0 - damping) * new
}

struct Problem<'a> {
    n: usize,
    /// `w_a s(i,i)` on the diagonal, `w_b s(i,j)` elsewhere.
    unary: Vec<f64>,
    /// `w_d r(j,l)`, or `None` when repellence is switched off.
    repel: Option<Vec<f64>>,
    /// Points grouped by box; only boxes holding two or more points.
    box_groups: Vec<Vec<usize>>,
    box_ids: &'a [usize],
    box_constraint: bool,
}

impl<'a> Problem<'a> {
    fn new(m: &SimilarityModel, w: &ObjectiveWeights, box_ids: &'a [usize]) -> Self {
        let n = m.n();
        let mut unary = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                unary[i * n + j] = if i == j {
                    w.w_a * m.self_sim(i)
                } else {
                    w.w_b * m.pair(i, j)
                };
            }
        }
        // Exactly symmetric points settle at zero belief and neither gets
        // selected; a rank-ordered nudge far below score resolution breaks the tie.
        for j in 0..n {
            let u = &mut unary[j * n + j];
            *u -= TIE_BREAK * (j + 1) as f64 / n as f64 * (1.0 + u.abs());
        }
        let repel = (w.w_d > 0.0).then(|| {
            let mut r = vec![0.0; n * n];
            for j in 0..n {
                for l in 0..n {
                    if j != l {
                        r[j * n + l] = w.w_d * m.repellence(j, l);
                    }
                }
            }
            r
        });
        let box_constraint = w.box_constraint();
        let box_groups = if box_constraint {
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &b) in box_ids.iter().enumerate() {
                groups.entry(b).or_default().push(i);
            }
            groups.into_values().filter(|g| g.len() > 1).collect()
        } else {
            Vec::new()
        };
        Self {
            n,
            unary,
            repel,
            box_groups,
            box_ids,
            box_constraint,
        }
    }

    fn update_responsibilities(&self, msg: &mut Messages, damping: f64) {
        let n = self.n;
        let mut beta = vec![0.0; n];
        for i in 0..n {
            let extra = msg.diagonal_extra(i);
            let row = i * n;
            for j in 0..n {
                beta[j] =
                    self.unary[row + j] + msg.alpha[row + j] + if i == j { extra } else { 0.0 };
            }
            // Largest and second largest competitor, the background (value 0) included.
            let (mut best, mut best_idx, mut second) = (0.0f64, usize::MAX, f64::NEG_INFINITY);
            for (j, &b) in beta.iter().enumerate() {
                if b > best {
                    second = best;
                    best = b;
                    best_idx = j;
                } else if b > second {
                    second = b;
                }
            }
            for j in 0..n {
                let competitor = if j == best_idx { second } else { best };
                let new = self.unary[row + j] + if i == j { extra } else { 0.0 } - competitor;
                msg.rho[row + j] = damp(msg.rho[row + j], new, damping);
            }
        }
    }

    fn update_availabilities(&self, msg: &mut Messages, damping: f64) {
        let n = self.n;
        for j in 0..n {
            let mut positive = 0.0;
            for k in 0..n {
                if k != j {
                    positive += msg.rho[k * n + j].max(0.0);
                }
            }
            let self_resp = msg.rho[j * n + j];
            for i in 0..n {
                let new = if i == j {
                    positive
                } else {
                    (self_resp + positive - msg.rho[i * n + j].max(0.0)).min(0.0)
                };
                msg.alpha[i * n + j] = damp(msg.alpha[i * n + j], new, damping);
            }
        }
    }

    fn update_diagonal_factors(&self, msg: &mut Messages, damping: f64) {
        let n = self.n;
        let beliefs: Vec<f64> = (0..n).map(|j| msg.belief(j)).collect();
        if let Some(repel) = &self.repel {
            let old = msg.psi.clone();
            for j in 0..n {
                for l in 0..n {
                    if j == l {
                        continue;
                    }
                    // c_ll -> R_jl
                    let mu = beliefs[l] - old[l * n + j];
                    let new = (repel[j * n + l] + mu).max(0.0) - mu.max(0.0);
                    msg.psi[j * n + l] = damp(old[j * n + l], new, damping);
                }
            }
        }
        if self.box_constraint {
            let old = msg.tau.clone();
            for group in &self.box_groups {
                for &j in group {
                    let rival = group
                        .iter()
                        .filter(|&&l| l != j)
                        .map(|&l| beliefs[l] - old[l])
                        .fold(0.0f64, f64::max);
                    msg.tau[j] = damp(old[j], -rival, damping);
                }
            }
        }
    }

    /// Hard assignment from the current beliefs, repaired so that every
    /// constraint holds.
    fn decode(&self, msg: &Messages) -> Assignment {
        let n = self.n;
        let beliefs: Vec<f64> = (0..n).map(|j| msg.belief(j)).collect();
        let mut exemplar: Vec<bool> = beliefs.iter().map(|&b| b > 0.0).collect();
        if self.box_constraint {
            let mut winner: BTreeMap<usize, usize> = BTreeMap::new();
            let chosen: Vec<usize> = (0..n).filter(|&j| exemplar[j]).collect();
            for j in chosen {
                let b = self.box_ids[j];
                match winner.get(&b) {
                    Some(&cur) if beliefs[cur] >= beliefs[j] => exemplar[j] = false,
                    Some(&cur) => {
                        exemplar[cur] = false;
                        winner.insert(b, j);
                    }
                    None => {
                        winner.insert(b, j);
                    }
                }
            }
        }
        let exemplars: Vec<usize> = (0..n).filter(|&j| exemplar[j]).collect();
        let assign = (0..n)
            .map(|i| {
                if exemplar[i] {
                    return Some(i);
                }
                let mut best = None;
                let mut best_val = 0.0;
                for &j in &exemplars {
                    let v = self.unary[i * n + j];
                    if v > best_val {
                        best_val = v;
                        best = Some(j);
                    }
                }
                best
            })
            .collect();
        Assignment(assign)
    }
}

/// Runs max-sum message passing on the full factor graph and decodes the
/// exemplar assignment.
pub fn run_max_sum(
    m: &SimilarityModel,
    w: &ObjectiveWeights,
    box_ids: &[usize],
    cfg: &InferenceConfig,
) -> Result<Clustering> {
    w.validate()?;
    cfg.validate()?;
    let n = m.n();
    if box_ids.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: box_ids.len(),
        });
    }
    let problem = Problem::new(m, w, box_ids);
    let mut msg = Messages::new(n);
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_window);
    let mut trace = cfg
        .trace_enabled
        .then(|| vec![Assignment::all_background(n)]);
    let mut assignment = Assignment::all_background(n);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        problem.update_responsibilities(&mut msg, cfg.damping);
        problem.update_availabilities(&mut msg, cfg.damping);
        problem.update_diagonal_factors(&mut msg, cfg.damping);
        assignment = problem.decode(&msg);
        if let Some(t) = trace.as_mut() {
            t.push(assignment.clone());
        }
        // A lone point exchanges no messages; one sweep already fixes the sign of its belief.
        if n == 1 || monitor.observe(assignment.exemplar_set()) {
            converged = true;
            break;
        }
    }

    let objective_value = objective_value(&assignment, m, w, box_ids)?;
    if !objective_value.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "decoded assignment violates a hard constraint: {:?}",
            assignment.violation(Some(box_ids))
        )));
    }
    Ok(Clustering {
        assignment,
        objective_value,
        iterations_run: iterations,
        converged,
        trace,
    })
}

/// Multi-class clustering over box-class candidates.
pub fn mapc_cluster(
    cands: &CandidateSet,
    m: &SimilarityModel,
    w: &ObjectiveWeights,
    cfg: &InferenceConfig,
) -> Result<RegularizedResult> {
    if m.n() != cands.len() {
        return Err(Error::DimensionMismatch {
            expected: cands.len(),
            actual: m.n(),
        });
    }
    if cands.is_empty() {
        return Ok(RegularizedResult::empty());
    }
    let clustering = run_max_sum(m, w, &cands.box_ids(), cfg)?;
    Ok(RegularizedResult::from_clustering(clustering, cands))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::CandidatePoint;
    use crate::fixtures;
    use crate::geometry::BoundingBox;
    use crate::inference::iteration_trace;
    use crate::oracle::brute_force_regularize;
    use crate::similarity::{build_similarity_model, SimilarityParams};
    use crate::taxonomy::Taxonomy;
    use proptest::prelude::*;

    fn traced() -> InferenceConfig {
        InferenceConfig {
            trace_enabled: true,
            ..Default::default()
        }
    }

    fn run(
        cands: &CandidateSet,
        t: &Taxonomy,
        w: &ObjectiveWeights,
    ) -> (SimilarityModel, RegularizedResult) {
        let m = build_similarity_model(cands, t, &SimilarityParams::default()).unwrap();
        let r = mapc_cluster(cands, &m, w, &traced()).unwrap();
        (m, r)
    }

    fn on_box(t: &Taxonomy, classes: &[(&str, f64)]) -> CandidateSet {
        let pts = classes
            .iter()
            .enumerate()
            .map(|(i, (name, score))| CandidatePoint {
                point_id: i,
                box_id: 0,
                class_id: t.id_of(name).unwrap(),
                score: *score,
            })
            .collect();
        CandidateSet::from_points(vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap()], pts)
            .unwrap()
    }

    #[test]
    fn lone_candidate_falls_to_background() {
        // Self-similarity is negative and the background pays nothing, so an
        // isolated point is never worth selecting.
        let t = fixtures::taxonomy();
        let cands = on_box(&t, &[("beagle", 0.9)]);
        let m = build_similarity_model(
            &cands,
            &t,
            &SimilarityParams {
                lambda: 0.7,
                theta_bg: 0.3,
            },
        )
        .unwrap();
        let r = mapc_cluster(&cands, &m, &ObjectiveWeights::default(), &traced()).unwrap();
        assert!(r.selected.is_empty());
        assert_eq!(r.objective_value, 0.0);
        let trace = iteration_trace(&r).unwrap();
        assert_eq!(trace, &[Assignment(vec![None]), Assignment(vec![None])]);
    }

    #[test]
    fn two_labels_on_one_box_keep_one() {
        let t = fixtures::taxonomy();
        let cands = on_box(&t, &[("beagle", 0.9), ("dachshund", 0.85)]);
        let w = ObjectiveWeights::default();
        let (m, r) = run(&cands, &t, &w);
        assert_eq!(r.assignment, Assignment(vec![Some(0), Some(0)]));
        let oracle = brute_force_regularize(&cands, &m, &w).unwrap();
        assert_eq!(oracle.best_assignment, r.assignment);
    }

    #[test]
    fn six_point_fixture_groups_by_object() {
        let (cands, t) = fixtures::six_point();
        let w = ObjectiveWeights::default();
        let (m, r) = run(&cands, &t, &w);
        assert_eq!(r.assignment.exemplars(), vec![0, 3]);
        assert_eq!(
            r.assignment.0,
            vec![Some(0), Some(0), Some(0), Some(3), Some(3), Some(3)]
        );
        let oracle = brute_force_regularize(&cands, &m, &w).unwrap();
        assert_eq!(oracle.best_assignment, r.assignment);
        assert!(r.converged);
    }

    #[test]
    fn trace_contract() {
        let (cands, t) = fixtures::six_point();
        let (_, r) = run(&cands, &t, &ObjectiveWeights::default());
        let trace = iteration_trace(&r).unwrap();
        let window = traced().convergence_window;
        assert_eq!(trace.len(), r.iterations_run + 1);
        assert_eq!(trace[0], Assignment::all_background(6));
        assert_eq!(trace.last().unwrap(), &r.assignment);
        let last = &trace[trace.len() - window..];
        assert!(last
            .iter()
            .all(|a| a.exemplar_set() == r.assignment.exemplar_set()));
    }

    #[test]
    fn box_constraint_can_be_switched_off() {
        let t = fixtures::taxonomy();
        let cands = on_box(&t, &[("beagle", 0.9), ("sedan", 0.9)]);
        let w = ObjectiveWeights {
            w_f: 0.0,
            ..Default::default()
        };
        let m = build_similarity_model(&cands, &t, &SimilarityParams::default()).unwrap();
        let r = run_max_sum(&m, &w, &cands.box_ids(), &InferenceConfig::default()).unwrap();
        let oracle = brute_force_regularize(&cands, &m, &w).unwrap();
        assert_eq!(r.objective_value, oracle.best_value);
    }

    #[test]
    fn dimension_checks() {
        let (cands, t) = fixtures::three_point();
        let m = build_similarity_model(&cands, &t, &SimilarityParams::default()).unwrap();
        let w = ObjectiveWeights::default();
        let cfg = InferenceConfig::default();
        assert!(matches!(
            run_max_sum(&m, &w, &[0, 1], &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let smaller =
            CandidateSet::from_points(cands.boxes.clone(), cands.points[..2].to_vec()).unwrap();
        assert!(matches!(
            mapc_cluster(&smaller, &m, &w, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = ObjectiveWeights { w_e: 0.0, ..w };
        assert!(mapc_cluster(&cands, &m, &bad, &cfg).is_err());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let t = fixtures::taxonomy();
        let cands = fixtures::random_instance(5, 8, &t);
        let (_, a) = run(&cands, &t, &ObjectiveWeights::default());
        let (_, b) = run(&cands, &t, &ObjectiveWeights::default());
        assert_eq!(a.objective_value.to_bits(), b.objective_value.to_bits());
        assert_eq!(a.trace, b.trace);
    }

    // Even two points form a loopy graph (c_01 links row 0 to column 1), so
    // exactness is not guaranteed; misses are rare and small.
    #[test]
    fn two_point_instances_are_nearly_exact() {
        let t = fixtures::taxonomy();
        let w = ObjectiveWeights::default();
        let mut misses = 0;
        for seed in 0..500 {
            let cands = fixtures::random_instance(seed, 2, &t);
            let (m, r) = run(&cands, &t, &w);
            let best = brute_force_regularize(&cands, &m, &w).unwrap().best_value;
            assert!(best - r.objective_value < 0.02, "seed {seed}");
            if best - r.objective_value > 1e-9 {
                misses += 1;
            }
        }
        assert!(misses <= 5, "{misses} misses");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn decoded_assignments_are_valid(seed in any::<u64>(), n in 1usize..12, w_a in 0.01..1.0f64, w_d in 0.0..0.5f64) {
            let t = fixtures::taxonomy();
            let cands = fixtures::random_instance(seed, n, &t);
            let w = ObjectiveWeights { w_a, w_d, ..Default::default() };
            let (_, r) = run(&cands, &t, &w);
            prop_assert!(r.assignment.is_valid(Some(&cands.box_ids())));
            prop_assert!(r.objective_value.is_finite());
        }
    }
}
