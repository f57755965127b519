use std::collections::BTreeMap;

use super::{
    run_max_sum, Assignment, Clustering, InferenceConfig, ObjectiveWeights, RegularizedResult,
};
use crate::candidates::CandidateSet;
use crate::error::Result;
use crate::similarity::{build_spatial_model, SimilarityParams};
use crate::taxonomy::ClassId;

/// Single-class clustering: every class is clustered on its own with an
/// IoU-only similarity, then the per-class exemplars are pooled.
///
/// `params.lambda` is ignored. The one-exemplar-per-box factor is dropped
/// since a box carries at most one point of a given class.
pub fn sapc_cluster(
    cands: &CandidateSet,
    params: &SimilarityParams,
    w: &ObjectiveWeights,
    cfg: &InferenceConfig,
) -> Result<RegularizedResult> {
    let w = ObjectiveWeights { w_f: 0.0, ..*w };
    w.validate()?;
    cfg.validate()?;
    if cands.is_empty() {
        return Ok(RegularizedResult::empty());
    }
    let model = build_spatial_model(cands, params.theta_bg)?;
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for p in &cands.points {
        by_class.entry(p.class_id).or_default().push(p.point_id);
    }

    let n = cands.len();
    let box_ids = cands.box_ids();
    let mut runs: Vec<(Vec<usize>, Clustering)> = Vec::with_capacity(by_class.len());
    for idx in by_class.into_values() {
        let sub = model.subset(&idx);
        let sub_boxes: Vec<usize> = idx.iter().map(|&i| box_ids[i]).collect();
        let clustering = run_max_sum(&sub, &w, &sub_boxes, cfg)?;
        runs.push((idx, clustering));
    }

    let lift = |idx: &[usize], local: &Assignment, global: &mut Assignment| {
        for (a, &i) in idx.iter().enumerate() {
            global.0[i] = local.get(a).map(|b| idx[b]);
        }
    };

    let mut assignment = Assignment::all_background(n);
    for (idx, c) in &runs {
        lift(idx, &c.assignment, &mut assignment);
    }
    let iterations_run = runs
        .iter()
        .map(|(_, c)| c.iterations_run)
        .max()
        .unwrap_or(0);
    let trace = cfg.trace_enabled.then(|| {
        (0..=iterations_run)
            .map(|t| {
                let mut snap = Assignment::all_background(n);
                for (idx, c) in &runs {
                    let local = c.trace.as_ref().expect("trace requested");
                    lift(idx, &local[t.min(local.len() - 1)], &mut snap);
                }
                snap
            })
            .collect()
    });
    let clustering = Clustering {
        assignment,
        objective_value: runs.iter().map(|(_, c)| c.objective_value).sum(),
        iterations_run,
        converged: runs.iter().all(|(_, c)| c.converged),
        trace,
    };
    Ok(RegularizedResult::from_clustering(clustering, cands))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::CandidatePoint;
    use crate::fixtures;
    use crate::geometry::BoundingBox;
    use crate::inference::mapc_cluster;
    use crate::oracle::brute_force_regularize;
    use crate::similarity::build_similarity_model;

    fn pt(box_id: usize, class_id: ClassId, score: f64) -> CandidatePoint {
        CandidatePoint {
            point_id: 0,
            box_id,
            class_id,
            score,
        }
    }

    fn boxes() -> Vec<BoundingBox> {
        vec![
            BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            BoundingBox::new(1.0, 0.0, 11.0, 10.0).unwrap(),
            BoundingBox::new(0.0, 1.0, 10.0, 11.0).unwrap(),
            BoundingBox::new(40.0, 40.0, 50.0, 50.0).unwrap(),
            BoundingBox::new(41.0, 40.0, 51.0, 50.0).unwrap(),
        ]
    }

    #[test]
    fn single_class_matches_restricted_mapc() {
        let t = fixtures::taxonomy();
        let c = t.id_of("beagle").unwrap();
        let cands = CandidateSet::from_points(
            boxes(),
            vec![
                pt(0, c, 0.9),
                pt(1, c, 0.8),
                pt(2, c, 0.6),
                pt(3, c, 0.7),
                pt(4, c, 0.5),
            ],
        )
        .unwrap();
        let params = SimilarityParams::default();
        let w = ObjectiveWeights::default();
        let cfg = InferenceConfig::default();
        let s = sapc_cluster(&cands, &params, &w, &cfg).unwrap();
        let m = build_similarity_model(
            &cands,
            &t,
            &SimilarityParams {
                lambda: 1.0,
                ..params
            },
        )
        .unwrap();
        let full = mapc_cluster(&cands, &m, &ObjectiveWeights { w_f: 0.0, ..w }, &cfg).unwrap();
        assert_eq!(s.assignment, full.assignment);
        assert_eq!(s.objective_value, full.objective_value);
    }

    #[test]
    fn classes_do_not_suppress_each_other() {
        let t = fixtures::taxonomy();
        let (dog, cat) = (t.id_of("dog").unwrap(), t.id_of("cat").unwrap());
        let cands = CandidateSet::from_points(
            boxes(),
            vec![
                pt(0, dog, 0.9),
                pt(1, dog, 0.7),
                pt(0, cat, 0.85),
                pt(2, cat, 0.6),
            ],
        )
        .unwrap();
        let r = sapc_cluster(
            &cands,
            &SimilarityParams::default(),
            &ObjectiveWeights::default(),
            &InferenceConfig::default(),
        )
        .unwrap();
        let classes: Vec<ClassId> = r.selected.iter().map(|s| s.class_id).collect();
        assert!(classes.contains(&dog) && classes.contains(&cat));
        assert!(r
            .selected
            .iter()
            .any(|s| s.box_id == 0 && s.class_id == dog));
        assert!(r
            .selected
            .iter()
            .any(|s| s.box_id == 0 && s.class_id == cat));
    }

    #[test]
    fn per_class_results_match_the_oracle() {
        let t = fixtures::taxonomy();
        let (dog, cat) = (t.id_of("dog").unwrap(), t.id_of("cat").unwrap());
        let points = vec![
            pt(0, dog, 0.9),
            pt(1, dog, 0.8),
            pt(3, dog, 0.7),
            pt(2, cat, 0.6),
            pt(3, cat, 0.75),
            pt(4, cat, 0.65),
        ];
        let cands = CandidateSet::from_points(boxes(), points.clone()).unwrap();
        let params = SimilarityParams::default();
        let w = ObjectiveWeights::default();
        let r = sapc_cluster(&cands, &params, &w, &InferenceConfig::default()).unwrap();
        let mut total = 0.0;
        for class in [dog, cat] {
            let idx: Vec<usize> = (0..points.len())
                .filter(|&i| points[i].class_id == class)
                .collect();
            let sub = CandidateSet::from_points(boxes(), idx.iter().map(|&i| points[i]).collect())
                .unwrap();
            let m = build_spatial_model(&sub, params.theta_bg).unwrap();
            let o = brute_force_regularize(&sub, &m, &ObjectiveWeights { w_f: 0.0, ..w }).unwrap();
            for (a, &i) in idx.iter().enumerate() {
                assert_eq!(
                    r.assignment.get(i),
                    o.best_assignment.get(a).map(|b| idx[b])
                );
            }
            total += o.best_value;
        }
        assert!((r.objective_value - total).abs() < 1e-12);
    }

    #[test]
    fn combined_trace_is_consistent() {
        let t = fixtures::taxonomy();
        let cands = fixtures::random_instance(3, 8, &t);
        let cfg = InferenceConfig {
            trace_enabled: true,
            ..Default::default()
        };
        let r = sapc_cluster(
            &cands,
            &SimilarityParams::default(),
            &ObjectiveWeights::default(),
            &cfg,
        )
        .unwrap();
        let trace = r.trace.as_ref().unwrap();
        assert_eq!(trace.len(), r.iterations_run + 1);
        assert_eq!(trace[0], Assignment::all_background(8));
        assert_eq!(trace.last().unwrap(), &r.assignment);
    }
}
