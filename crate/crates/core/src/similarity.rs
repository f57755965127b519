//! Dense spatial-semantic similarity model over candidate points.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{CandidatePoint, CandidateSet};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityParams {
    /// Weight of the IoU term; `1 - lambda` goes to the Lin term.
    pub lambda: f64,
    pub theta_bg: f64,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            theta_bg: 0.2,
        }
    }
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.theta_bg) {
            return Err(Error::InvalidConfig(format!(
                "theta_bg {} outside [0, 1)",
                self.theta_bg
            )));
        }
        Ok(())
    }
}

/// Row-major `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: r.len(),
            });
        }
        Ok(Self {
            n,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Pairwise similarities, self-similarities and exemplar repellence.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    pair_sim: SquareMatrix,
    self_sim: Vec<f64>,
    repellence: SquareMatrix,
}

impl SimilarityModel {
    /// Assembles a model from raw parts; `repellence` is derived as `-(s + 1)`.
    pub fn from_parts(pair_sim: SquareMatrix, self_sim: Vec<f64>) -> Result<Self> {
        if self_sim.len() != pair_sim.n() {
            return Err(Error::DimensionMismatch {
                expected: pair_sim.n(),
                actual: self_sim.len(),
            });
        }
        let mut repellence = SquareMatrix::zeros(pair_sim.n());
        for (r, s) in repellence
            .as_mut_slice()
            .iter_mut()
            .zip(pair_sim.as_slice())
        {
            *r = -(s + 1.0);
        }
        Ok(Self {
            pair_sim,
            self_sim,
            repellence,
        })
    }

    pub fn n(&self) -> usize {
        self.self_sim.len()
    }

    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pair_sim.get(i, j)
    }

    #[inline]
    pub fn self_sim(&self, i: usize) -> f64 {
        self.self_sim[i]
    }

    #[inline]
    pub fn repellence(&self, i: usize, j: usize) -> f64 {
        self.repellence.get(i, j)
    }

    pub fn pair_matrix(&self) -> &SquareMatrix {
        &self.pair_sim
    }

    pub fn self_sims(&self) -> &[f64] {
        &self.self_sim
    }

    /// Restriction to the given points, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        let mut pair_sim = SquareMatrix::zeros(k);
        let mut repellence = SquareMatrix::zeros(k);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                pair_sim.set(a, b, self.pair(i, j));
                repellence.set(a, b, self.repellence(i, j));
            }
        }
        Self {
            pair_sim,
            self_sim: idx.iter().map(|&i| self.self_sim[i]).collect(),
            repellence,
        }
    }
}

pub fn pair_similarity(
    i: &CandidatePoint,
    j: &CandidatePoint,
    boxes: &[BoundingBox],
    taxonomy: &Taxonomy,
    params: &SimilarityParams,
) -> Result<f64> {
    let spatial = iou(&boxes[i.box_id], &boxes[j.box_id]);
    let semantic = taxonomy.lin_similarity(i.class_id, j.class_id)?;
    Ok(params.lambda * spatial + (1.0 - params.lambda) * semantic)
}

/// `-1 / (score - theta_bg)`; strictly negative.
pub fn self_similarity(score: f64, theta_bg: f64) -> Result<f64> {
    if score.partial_cmp(&theta_bg) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::ScoreBelowThreshold { score, theta_bg });
    }
    Ok(-1.0 / (score - theta_bg))
}

const PARALLEL_ROWS: usize = 64;

pub fn build_similarity_model(
    cands: &CandidateSet,
    taxonomy: &Taxonomy,
    params: &SimilarityParams,
) -> Result<SimilarityModel> {
    params.validate()?;
    let points = &cands.points;
    let n = points.len();
    let self_sim = points
        .iter()
        .map(|p| self_similarity(p.score, params.theta_bg))
        .collect::<Result<Vec<_>>>()?;
    for p in points {
        taxonomy.check(p.class_id)?;
    }

    let row = |i: usize| -> Result<Vec<f64>> {
        (0..n)
            .map(|j| {
                if i == j {
                    Ok(0.0)
                } else {
                    pair_similarity(&points[i], &points[j], &cands.boxes, taxonomy, params)
                }
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = if n >= PARALLEL_ROWS {
        (0..n).into_par_iter().map(row).collect::<Result<_>>()?
    } else {
        (0..n).map(row).collect::<Result<_>>()?
    };
    SimilarityModel::from_parts(SquareMatrix::from_rows(rows)?, self_sim)
}

/// IoU-only model; the same values `build_similarity_model` yields with
/// `lambda = 1`.
pub fn build_spatial_model(cands: &CandidateSet, theta_bg: f64) -> Result<SimilarityModel> {
    SimilarityParams {
        lambda: 1.0,
        theta_bg,
    }
    .validate()?;
    let points = &cands.points;
    let n = points.len();
    let self_sim = points
        .iter()
        .map(|p| self_similarity(p.score, theta_bg))
        .collect::<Result<Vec<_>>>()?;
    let mut pair = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pair.set(
                    i,
                    j,
                    iou(cands.box_of(&points[i]), cands.box_of(&points[j])),
                );
            }
        }
    }
    SimilarityModel::from_parts(pair, self_sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::taxonomy::ClassId;

    fn pt(point_id: usize, box_id: usize, class_id: ClassId, score: f64) -> CandidatePoint {
        CandidatePoint {
            point_id,
            box_id,
            class_id,
            score,
        }
    }

    #[test]
    fn self_similarity_examples() {
        assert_eq!(self_similarity(1.0, 0.0).unwrap(), -1.0);
        assert_eq!(self_similarity(0.75, 0.25).unwrap(), -2.0);
        assert!((self_similarity(0.3, 0.2).unwrap() + 10.0).abs() < 1e-9);
        assert!(matches!(
            self_similarity(0.2, 0.2),
            Err(Error::ScoreBelowThreshold { .. })
        ));
        assert!(self_similarity(0.9, 0.1).unwrap() > self_similarity(0.8, 0.1).unwrap());
    }

    #[test]
    fn pair_similarity_examples() {
        let t = fixtures::star_with_parent();
        let boxes = vec![
            BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            BoundingBox::new(5.0, 0.0, 15.0, 10.0).unwrap(),
            BoundingBox::new(20.0, 20.0, 30.0, 30.0).unwrap(),
        ];
        let leaf1 = t.id_of("leaf1").unwrap();
        let leaf2 = t.id_of("leaf2").unwrap();
        let leaf3 = t.id_of("leaf3").unwrap();
        let half = SimilarityParams {
            lambda: 0.5,
            theta_bg: 0.0,
        };
        let a = pt(0, 0, leaf1, 0.9);
        assert_eq!(pair_similarity(&a, &a, &boxes, &t, &half).unwrap(), 1.0);
        // disjoint boxes, lcs = root
        let c = pt(1, 2, leaf3, 0.9);
        for lambda in [0.0, 0.3, 1.0] {
            let p = SimilarityParams {
                lambda,
                theta_bg: 0.0,
            };
            assert_eq!(pair_similarity(&a, &c, &boxes, &t, &p).unwrap(), 0.0);
        }
        // iou 1/3, lin 0.5
        let b = pt(2, 1, leaf2, 0.9);
        let p = SimilarityParams {
            lambda: 0.6,
            theta_bg: 0.0,
        };
        assert!((pair_similarity(&a, &b, &boxes, &t, &p).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn single_point_model() {
        let t = fixtures::star_with_parent();
        let cands = CandidateSet::from_points(
            vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
            vec![pt(0, 0, ClassId(1), 0.7)],
        )
        .unwrap();
        let m = build_similarity_model(&cands, &t, &SimilarityParams::default()).unwrap();
        assert_eq!(m.n(), 1);
        assert!((m.self_sim(0) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_are_maximally_similar() {
        let t = fixtures::star_with_parent();
        let bx = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let cands = CandidateSet::from_points(
            vec![bx, bx],
            vec![pt(0, 0, ClassId(1), 0.7), pt(1, 1, ClassId(1), 0.8)],
        )
        .unwrap();
        let m = build_similarity_model(&cands, &t, &SimilarityParams::default()).unwrap();
        assert_eq!(m.pair(0, 1), 1.0);
        assert_eq!(m.repellence(0, 1), -2.0);
    }

    #[test]
    fn three_point_table() {
        // Hand-computed: boxes A=(0,0,10,10), B=(5,0,15,10) (IoU 1/3), C disjoint.
        // Classes leaf1, leaf2 (lin 0.5), leaf3 (lin 0 to both). lambda 0.6.
        let (cands, t) = fixtures::three_point();
        let p = SimilarityParams {
            lambda: 0.6,
            theta_bg: 0.2,
        };
        let m = build_similarity_model(&cands, &t, &p).unwrap();
        let expected = [[0.0, 0.4, 0.0], [0.4, 0.0, 0.0], [0.0, 0.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((m.pair(i, j) - expected[i][j]).abs() < 1e-12, "({i},{j})");
                    assert!((m.pair(i, j) + m.repellence(i, j) + 1.0).abs() < 1e-12);
                }
            }
        }
        let selfs = [-1.0 / 0.7, -1.0 / 0.6, -1.0 / 0.5];
        for (i, s) in selfs.iter().enumerate() {
            assert!((m.self_sim(i) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn below_threshold_rejected() {
        let t = fixtures::star_with_parent();
        let cands = CandidateSet::from_points(
            vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
            vec![pt(0, 0, ClassId(1), 0.1)],
        )
        .unwrap();
        assert!(matches!(
            build_similarity_model(&cands, &t, &SimilarityParams::default()),
            Err(Error::ScoreBelowThreshold { .. })
        ));
    }

    #[test]
    fn unknown_class_propagates() {
        let t = fixtures::star_with_parent();
        let cands = CandidateSet::from_points(
            vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
            vec![pt(0, 0, ClassId(99), 0.9)],
        )
        .unwrap();
        assert!(matches!(
            build_similarity_model(&cands, &t, &SimilarityParams::default()),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn parallel_and_serial_rows_agree() {
        let t = fixtures::taxonomy();
        let leaves = t.leaves();
        let boxes: Vec<BoundingBox> = (0..80)
            .map(|i| {
                let x = (i % 9) as f64 * 7.0;
                let y = (i / 9) as f64 * 5.0;
                BoundingBox::new(x, y, x + 12.0, y + 9.0).unwrap()
            })
            .collect();
        let points: Vec<CandidatePoint> = (0..80)
            .map(|i| pt(i, i, leaves[i % leaves.len()], 0.3 + (i % 7) as f64 * 0.1))
            .collect();
        let cands = CandidateSet::from_points(boxes, points).unwrap();
        let params = SimilarityParams::default();
        let m = build_similarity_model(&cands, &t, &params).unwrap();
        for i in 0..80 {
            for j in 0..80 {
                assert_eq!(m.pair(i, j), m.pair(j, i));
                if i != j {
                    let direct = pair_similarity(
                        &cands.points[i],
                        &cands.points[j],
                        &cands.boxes,
                        &t,
                        &params,
                    )
                    .unwrap();
                    assert_eq!(m.pair(i, j), direct);
                }
            }
        }
    }
}
