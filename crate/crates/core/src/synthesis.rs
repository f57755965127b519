//! Seeded synthetic scenes with a fine-grained detector noise model.
//!
//! Each planted object receives several jittered proposals. A proposal
//! scores the true class and, with the confusion probability, also a
//! taxonomy sibling at a competitive level. Clutter proposals land on
//! random boxes with random classes.

use serde::{Deserialize, Serialize};

use crate::candidates::Detection;
use crate::error::{Error, Result};
use crate::evaluation::GroundTruthObject;
use crate::geometry::BoundingBox;
use crate::rng::PortableRng;
use crate::taxonomy::{ClassId, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

/// Half-open real range `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxJitter {
    /// Centre offset as a fraction of the object's width/height.
    pub center: f64,
    /// Relative size perturbation.
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub true_score: ScoreRange,
    pub confusion_prob: f64,
    pub sibling_score: ScoreRange,
    /// Mean number of clutter proposals per scene.
    pub clutter_rate: f64,
    pub clutter_score: ScoreRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_objects: CountRange,
    pub image_size: ImageSize,
    /// Leaf classes objects are drawn from; empty means every leaf with a sibling.
    pub leaf_class_pool: Vec<ClassId>,
    pub proposals_per_object: CountRange,
    /// Object side length as a fraction of the shorter image side.
    pub object_size: ScoreRange,
    pub box_jitter: BoxJitter,
    pub score_model: ScoreModel,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: CountRange { min: 2, max: 6 },
            image_size: ImageSize {
                width: 640.0,
                height: 480.0,
            },
            leaf_class_pool: Vec::new(),
            proposals_per_object: CountRange { min: 3, max: 6 },
            object_size: ScoreRange { lo: 0.15, hi: 0.35 },
            box_jitter: BoxJitter {
                center: 0.12,
                scale: 0.12,
            },
            score_model: ScoreModel {
                true_score: ScoreRange { lo: 0.45, hi: 0.95 },
                confusion_prob: 0.35,
                sibling_score: ScoreRange { lo: 0.45, hi: 0.95 },
                clutter_rate: 3.0,
                clutter_score: ScoreRange { lo: 0.3, hi: 0.8 },
            },
            rng_seed: 0,
        }
    }
}

/// One image worth of detector output with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image: ImageSize,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthObject>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::SpecInvalid(msg.into())
}

fn check_unit_range(name: &str, r: ScoreRange) -> Result<()> {
    if !(r.lo.is_finite() && r.hi.is_finite() && 0.0 <= r.lo && r.lo <= r.hi && r.hi <= 1.0) {
        return Err(invalid(format!(
            "{name} [{}, {}) is not a sub-range of [0, 1]",
            r.lo, r.hi
        )));
    }
    Ok(())
}

fn check_count(name: &str, r: CountRange) -> Result<()> {
    if r.min > r.max {
        return Err(invalid(format!(
            "{name} range {}..={} is empty",
            r.min, r.max
        )));
    }
    Ok(())
}

impl SceneSpec {
    /// The class pool after defaulting, checked against `t`.
    pub fn resolve_pool(&self, t: &Taxonomy) -> Result<Vec<ClassId>> {
        let pool: Vec<ClassId> = if self.leaf_class_pool.is_empty() {
            let mut leaves = Vec::new();
            for c in t.leaves() {
                if !t.siblings(c)?.is_empty() {
                    leaves.push(c);
                }
            }
            leaves
        } else {
            self.leaf_class_pool.clone()
        };
        for &c in &pool {
            t.check(c)
                .map_err(|_| invalid(format!("pool class {c} is not in the taxonomy")))?;
            if !t.is_leaf(c)? {
                return Err(invalid(format!("pool class {} is not a leaf", t.name(c)?)));
            }
            if self.score_model.confusion_prob > 0.0 && t.siblings(c)?.is_empty() {
                return Err(invalid(format!(
                    "pool class {} has no sibling to confuse with",
                    t.name(c)?
                )));
            }
        }
        if pool.is_empty() && (self.n_objects.max > 0 || self.score_model.clutter_rate > 0.0) {
            return Err(invalid("class pool is empty"));
        }
        Ok(pool)
    }

    pub fn validate(&self, t: &Taxonomy) -> Result<()> {
        check_count("n_objects", self.n_objects)?;
        check_count("proposals_per_object", self.proposals_per_object)?;
        let ImageSize { width, height } = self.image_size;
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(invalid(format!(
                "image size {width}x{height} is not positive"
            )));
        }
        let s = self.object_size;
        if !(s.lo > 0.0 && s.lo <= s.hi && s.hi <= 1.0) {
            return Err(invalid(format!(
                "object_size [{}, {}) outside (0, 1]",
                s.lo, s.hi
            )));
        }
        let j = self.box_jitter;
        if !(j.center.is_finite()
            && j.scale.is_finite()
            && j.center >= 0.0
            && (0.0..1.0).contains(&j.scale))
        {
            return Err(invalid("box_jitter needs center >= 0 and scale in [0, 1)"));
        }
        let m = &self.score_model;
        check_unit_range("true_score", m.true_score)?;
        check_unit_range("sibling_score", m.sibling_score)?;
        check_unit_range("clutter_score", m.clutter_score)?;
        if !(0.0..=1.0).contains(&m.confusion_prob) {
            return Err(invalid(format!(
                "confusion_prob {} outside [0, 1]",
                m.confusion_prob
            )));
        }
        if !(m.clutter_rate.is_finite() && (0.0..=100.0).contains(&m.clutter_rate)) {
            return Err(invalid(format!(
                "clutter_rate {} outside [0, 100]",
                m.clutter_rate
            )));
        }
        self.resolve_pool(t)?;
        Ok(())
    }
}

/// Box of the given size centred at `(cx, cy)`, clipped to the image.
fn clipped_box(cx: f64, cy: f64, w: f64, h: f64, img: ImageSize) -> BoundingBox {
    let x0 = (cx - w / 2.0).clamp(0.0, img.width - 1.0);
    let y0 = (cy - h / 2.0).clamp(0.0, img.height - 1.0);
    let x1 = (cx + w / 2.0).clamp(x0 + 1.0, img.width);
    let y1 = (cy + h / 2.0).clamp(y0 + 1.0, img.height);
    BoundingBox::new(x0, y0, x1, y1).expect("clipped box is non-degenerate")
}

fn random_box(rng: &mut PortableRng, spec: &SceneSpec) -> BoundingBox {
    let img = spec.image_size;
    let side = img.width.min(img.height) * rng.uniform(spec.object_size.lo, spec.object_size.hi);
    let aspect = rng.uniform(0.6, 1.6).sqrt();
    let (w, h) = (side * aspect, side / aspect);
    let cx = rng.uniform(w / 2.0, (img.width - w / 2.0).max(w / 2.0));
    let cy = rng.uniform(h / 2.0, (img.height - h / 2.0).max(h / 2.0));
    clipped_box(cx, cy, w, h, img)
}

fn draw(rng: &mut PortableRng, r: ScoreRange) -> f64 {
    rng.uniform(r.lo, r.hi)
}

/// Generates one scene; identical specs give identical scenes.
pub fn generate_scene(spec: &SceneSpec, t: &Taxonomy) -> Result<Scene> {
    spec.validate(t)?;
    let pool = spec.resolve_pool(t)?;
    let mut rng = PortableRng::new(spec.rng_seed);
    let img = spec.image_size;
    let m = &spec.score_model;
    let j = spec.box_jitter;

    let n_objects = rng.range_inclusive(spec.n_objects.min, spec.n_objects.max);
    let mut ground_truth = Vec::with_capacity(n_objects);
    let mut detections = Vec::new();
    for _ in 0..n_objects {
        let class_id = *rng.choose(&pool);
        let bbox = random_box(&mut rng, spec);
        ground_truth.push(GroundTruthObject { bbox, class_id });
        let siblings = t.siblings(class_id)?;
        let proposals =
            rng.range_inclusive(spec.proposals_per_object.min, spec.proposals_per_object.max);
        for _ in 0..proposals {
            let (w, h) = (bbox.width(), bbox.height());
            let cx = (bbox.x_min() + bbox.x_max()) / 2.0 + w * rng.uniform(-j.center, j.center);
            let cy = (bbox.y_min() + bbox.y_max()) / 2.0 + h * rng.uniform(-j.center, j.center);
            let sw = w * (1.0 + rng.uniform(-j.scale, j.scale));
            let sh = h * (1.0 + rng.uniform(-j.scale, j.scale));
            let pbox = clipped_box(cx, cy, sw, sh, img);
            let mut scores = vec![(class_id, draw(&mut rng, m.true_score))];
            if rng.bernoulli(m.confusion_prob) {
                let sib = *rng.choose(&siblings);
                scores.push((sib, draw(&mut rng, m.sibling_score)));
            }
            detections.push(Detection::new(pbox, scores)?);
        }
    }
    let clutter = rng.poisson(m.clutter_rate);
    for _ in 0..clutter {
        let class_id = *rng.choose(&pool);
        let bbox = random_box(&mut rng, spec);
        detections.push(Detection::new(
            bbox,
            [(class_id, draw(&mut rng, m.clutter_score))],
        )?);
    }
    Ok(Scene {
        image: img,
        detections,
        ground_truth,
    })
}

/// Seed of scene `index` in a suite rooted at `base`.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    // SplitMix64 finaliser keeps neighbouring suites decorrelated.
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` scenes sharing `spec` except for their seeds.
pub fn generate_suite(spec: &SceneSpec, count: usize, t: &Taxonomy) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| {
            let s = SceneSpec {
                rng_seed: scene_seed(spec.rng_seed, i),
                ..spec.clone()
            };
            generate_scene(&s, t)
        })
        .collect()
}
