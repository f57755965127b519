//! Small hand-built inputs shared by tests, demos and the CLI.

use crate::candidates::{CandidatePoint, CandidateSet};
use crate::geometry::BoundingBox;
use crate::rng::PortableRng;
use crate::taxonomy::{load_taxonomy, ClassId, ClassNode, Taxonomy};

pub const TAXONOMY_JSON: &str = include_str!("../data/taxonomy.json");

/// The bundled animal/furniture/bag/vehicle hierarchy.
pub fn taxonomy() -> Taxonomy {
    load_taxonomy(TAXONOMY_JSON).expect("bundled taxonomy is valid")
}

/// `root -> {parent -> {leaf1, leaf2}, leaf3}` with
/// `lin(leaf1, leaf2) = 0.5` and `lin(leaf*, leaf3) = 0`.
pub fn star_with_parent() -> Taxonomy {
    let node = |id: usize, name: &str, parent_id: Option<usize>, frequency: f64| ClassNode {
        id,
        name: name.into(),
        parent_id,
        frequency,
    };
    Taxonomy::from_nodes(vec![
        node(0, "root", None, 0.0),
        node(1, "parent", Some(0), 0.0),
        node(2, "leaf1", Some(1), 1.0),
        node(3, "leaf2", Some(1), 1.0),
        node(4, "leaf3", Some(0), 2.0),
    ])
    .expect("fixture taxonomy is valid")
}

fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).expect("fixture box is valid")
}

fn points(spec: &[(usize, ClassId, f64)]) -> Vec<CandidatePoint> {
    spec.iter()
        .enumerate()
        .map(|(i, &(box_id, class_id, score))| CandidatePoint {
            point_id: i,
            box_id,
            class_id,
            score,
        })
        .collect()
}

/// Three points on [`star_with_parent`]: leaf1 and leaf2 on boxes with IoU
/// 1/3, leaf3 on a disjoint box. Scores 0.9, 0.8, 0.7.
pub fn three_point() -> (CandidateSet, Taxonomy) {
    let t = star_with_parent();
    let boxes = vec![
        bx(0.0, 0.0, 10.0, 10.0),
        bx(5.0, 0.0, 15.0, 10.0),
        bx(20.0, 20.0, 30.0, 30.0),
    ];
    let pts = points(&[
        (0, ClassId(2), 0.9),
        (1, ClassId(3), 0.8),
        (2, ClassId(4), 0.7),
    ]);
    (
        CandidateSet::from_points(boxes, pts).expect("fixture is valid"),
        t,
    )
}

/// Two separated objects on the bundled taxonomy, each covered by three
/// overlapping proposals labelled with sibling breeds.
pub fn six_point() -> (CandidateSet, Taxonomy) {
    let t = taxonomy();
    let id = |name: &str| t.id_of(name).expect("fixture class exists");
    let boxes = vec![
        bx(10.0, 10.0, 60.0, 50.0),
        bx(12.0, 8.0, 62.0, 52.0),
        bx(8.0, 12.0, 57.0, 49.0),
        bx(120.0, 30.0, 170.0, 90.0),
        bx(118.0, 32.0, 166.0, 88.0),
        bx(123.0, 28.0, 172.0, 93.0),
    ];
    let pts = points(&[
        (0, id("beagle"), 0.9),
        (1, id("dachshund"), 0.75),
        (2, id("beagle"), 0.6),
        (3, id("tabby"), 0.85),
        (4, id("siamese"), 0.8),
        (5, id("tabby"), 0.55),
    ]);
    (
        CandidateSet::from_points(boxes, pts).expect("fixture is valid"),
        t,
    )
}

/// Random instance of `n` points on the bundled taxonomy: boxes scatter
/// around one to three centres so that overlaps are common, boxes may carry
/// several classes, and scores lie in `(0.25, 1)`.
pub fn random_instance(seed: u64, n: usize, t: &Taxonomy) -> CandidateSet {
    let mut rng = PortableRng::new(seed);
    let leaves = t.leaves();
    assert!(n <= leaves.len(), "more points than leaf classes");
    let n_boxes = rng.range_inclusive(1, n.max(1));
    let centres: Vec<(f64, f64)> = (0..rng.range_inclusive(1, 3))
        .map(|_| (rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0)))
        .collect();
    let boxes: Vec<BoundingBox> = (0..n_boxes)
        .map(|_| {
            let c = *rng.choose(&centres);
            let side = rng.uniform(20.0, 40.0);
            BoundingBox::from_xywh(
                c.0 + rng.uniform(-8.0, 8.0),
                c.1 + rng.uniform(-8.0, 8.0),
                side,
                side * rng.uniform(0.7, 1.3),
            )
            .expect("positive size")
        })
        .collect();
    let mut used: Vec<(usize, ClassId)> = Vec::new();
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let box_id = if i < n_boxes {
            i
        } else {
            rng.below(n_boxes as u64) as usize
        };
        // one point per (box, class)
        let class_id = loop {
            let c = *rng.choose(&leaves);
            if !used.contains(&(box_id, c)) {
                break c;
            }
        };
        used.push((box_id, class_id));
        pts.push(CandidatePoint {
            point_id: i,
            box_id,
            class_id,
            score: rng.uniform(0.25, 1.0),
        });
    }
    CandidateSet::from_points(boxes, pts).expect("generated points reference existing boxes")
}
