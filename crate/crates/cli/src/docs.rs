//! On-disk document formats. Every JSON document carries
//! `format_version: 1`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mapc::evaluation::{GroundTruthObject, Prediction};
use mapc::synthesis::{ImageSize, Scene, SceneSpec};
use mapc::{BoundingBox, ClassId, Detection, RunConfig, Taxonomy};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

fn one() -> u32 {
    FORMAT_VERSION
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: cannot read: {e}", path.display())))
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| {
        CliError::input(format!(
            "{}: line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

fn check_version(path: &Path, v: u32) -> CliResult<()> {
    if v != FORMAT_VERSION {
        return Err(CliError::input(format!(
            "{}: unsupported format_version {v}",
            path.display()
        )));
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .map_err(|e| CliError::config(format!("{}: cannot write: {e}", path.display())))
}

fn class_id(t: &Taxonomy, name: &str, field: impl FnOnce() -> String) -> CliResult<ClassId> {
    t.id_of(name)
        .map_err(|_| CliError::input(format!("{}: unknown class {name:?}", field())))
}

fn bbox(raw: [f64; 4], field: impl FnOnce() -> String) -> CliResult<BoundingBox> {
    BoundingBox::new(raw[0], raw[1], raw[2], raw[3])
        .map_err(|e| CliError::input(format!("{}: {e}", field())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDoc {
    pub width: f64,
    pub height: f64,
}

impl From<ImageSize> for ImageDoc {
    fn from(s: ImageSize) -> Self {
        Self {
            width: s.width,
            height: s.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEntry {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsDoc {
    #[serde(default = "one")]
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageDoc>,
    pub detections: Vec<DetectionEntry>,
}

impl DetectionsDoc {
    pub fn from_detections(
        image: Option<ImageSize>,
        dets: &[Detection],
        t: &Taxonomy,
    ) -> CliResult<Self> {
        let detections = dets
            .iter()
            .map(|d| {
                let scores = d
                    .scores
                    .iter()
                    .map(|(c, s)| Ok((t.name(*c)?.to_string(), *s)))
                    .collect::<mapc::Result<_>>()?;
                Ok(DetectionEntry {
                    bbox: d.bbox.to_array(),
                    scores,
                })
            })
            .collect::<CliResult<_>>()?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            image: image.map(ImageDoc::from),
            detections,
        })
    }
}

pub struct LoadedDetections {
    pub image: Option<ImageSize>,
    pub detections: Vec<Detection>,
}

pub fn load_detections(path: &Path, t: &Taxonomy) -> CliResult<LoadedDetections> {
    let doc: DetectionsDoc = parse_json(path, &read_text(path)?)?;
    check_version(path, doc.format_version)?;
    let mut detections = Vec::with_capacity(doc.detections.len());
    for (k, entry) in doc.detections.iter().enumerate() {
        let b = bbox(entry.bbox, || format!("detections[{k}].box")).map_err(|e| e.in_file(path))?;
        let mut scores = Vec::with_capacity(entry.scores.len());
        for (name, s) in &entry.scores {
            let c = class_id(t, name, || format!("detections[{k}].scores"))
                .map_err(|e| e.in_file(path))?;
            scores.push((c, *s));
        }
        let det = Detection::new(b, scores)
            .map_err(|e| CliError::input(format!("detections[{k}]: {e}")).in_file(path))?;
        detections.push(det);
    }
    Ok(LoadedDetections {
        image: doc.image.map(|i| ImageSize {
            width: i.width,
            height: i.height,
        }),
        detections,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthEntry {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthDoc {
    #[serde(default = "one")]
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageDoc>,
    pub objects: Vec<GroundTruthEntry>,
}

impl GroundTruthDoc {
    pub fn from_objects(
        image: Option<ImageSize>,
        gt: &[GroundTruthObject],
        t: &Taxonomy,
    ) -> CliResult<Self> {
        let objects = gt
            .iter()
            .map(|g| {
                Ok(GroundTruthEntry {
                    bbox: g.bbox.to_array(),
                    class_name: t.name(g.class_id)?.to_string(),
                })
            })
            .collect::<CliResult<_>>()?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            image: image.map(ImageDoc::from),
            objects,
        })
    }
}

pub fn load_ground_truth(path: &Path, t: &Taxonomy) -> CliResult<Vec<GroundTruthObject>> {
    let doc: GroundTruthDoc = parse_json(path, &read_text(path)?)?;
    check_version(path, doc.format_version)?;
    doc.objects
        .iter()
        .enumerate()
        .map(|(k, o)| {
            Ok(GroundTruthObject {
                bbox: bbox(o.bbox, || format!("objects[{k}].box")).map_err(|e| e.in_file(path))?,
                class_id: class_id(t, &o.class_name, || format!("objects[{k}].class_name"))
                    .map_err(|e| e.in_file(path))?,
            })
        })
        .collect()
}

/// One final detection in a results document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub class_name: String,
    pub class_id: usize,
    pub score: f64,
    pub exemplar: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDoc {
    pub format_version: u32,
    pub method: String,
    pub candidate_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations_run: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub detections: Vec<ResultEntry>,
}

/// The fields of a results document the evaluator reads.
#[derive(Debug, Clone, Deserialize)]
struct PredictionEntry {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_name: String,
    score: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct PredictionsDoc {
    #[serde(default = "one")]
    format_version: u32,
    detections: Vec<PredictionEntry>,
}

pub fn load_predictions(path: &Path, t: &Taxonomy) -> CliResult<Vec<Prediction>> {
    let doc: PredictionsDoc = parse_json(path, &read_text(path)?)?;
    check_version(path, doc.format_version)?;
    doc.detections
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if !(p.score.is_finite() && (0.0..=1.0).contains(&p.score)) {
                return Err(CliError::input(format!(
                    "detections[{k}].score {} outside [0, 1]",
                    p.score
                ))
                .in_file(path));
            }
            Ok(Prediction {
                bbox: bbox(p.bbox, || format!("detections[{k}].box"))
                    .map_err(|e| e.in_file(path))?,
                class_id: class_id(t, &p.class_name, || format!("detections[{k}].class_name"))
                    .map_err(|e| e.in_file(path))?,
                score: p.score,
            })
        })
        .collect()
}

pub fn load_taxonomy_file(path: Option<&Path>) -> CliResult<Taxonomy> {
    match path {
        None => Ok(mapc::fixtures::taxonomy()),
        Some(p) => mapc::load_taxonomy(&read_text(p)?)
            .map_err(|e| CliError::input(e.to_string()).in_file(p)),
    }
}

/// Replaces class names in `list` by their ids; ids pass through.
fn names_to_ids(list: &mut Value, t: &Taxonomy, field: &str) -> CliResult<()> {
    let Some(items) = list.as_array_mut() else {
        return Ok(());
    };
    for item in items.iter_mut() {
        if let Some(name) = item.as_str() {
            let id = t
                .id_of(name)
                .map_err(|_| CliError::config(format!("{field}: unknown class {name:?}")))?;
            *item = Value::from(id.0);
        }
    }
    Ok(())
}

fn strip_version(path: &Path, v: &mut Value, err: fn(String) -> CliError) -> CliResult<()> {
    if let Some(obj) = v.as_object_mut() {
        if let Some(fv) = obj.remove("format_version") {
            if fv.as_u64() != Some(FORMAT_VERSION as u64) {
                return Err(err(format!(
                    "{}: unsupported format_version {fv}",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

/// Reads a run configuration; unspecified fields keep their defaults.
/// Relabel targets may be given by class name.
pub fn load_config(path: Option<&Path>, t: &Taxonomy) -> CliResult<RunConfig> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = read_text(p).map_err(|e| CliError::config(e.message))?;
            let mut v: Value = serde_json::from_str(&text).map_err(|e| {
                CliError::config(format!(
                    "{}: line {} column {}: {e}",
                    p.display(),
                    e.line(),
                    e.column()
                ))
            })?;
            strip_version(p, &mut v, CliError::config)?;
            if let Some(targets) = v.pointer_mut("/eval/parent_relabel_targets") {
                names_to_ids(targets, t, "eval.parent_relabel_targets")
                    .map_err(|e| e.in_file(p))?;
            }
            serde_json::from_value(v)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    if let Some(targets) = &cfg.eval.parent_relabel_targets {
        for &c in targets {
            t.check(c)
                .map_err(|e| CliError::config(format!("eval.parent_relabel_targets: {e}")))?;
        }
    }
    Ok(cfg)
}

/// Reads a scene spec; the class pool is given by class name.
pub fn load_scene_spec(path: Option<&Path>, t: &Taxonomy) -> CliResult<SceneSpec> {
    let Some(p) = path else {
        return Ok(SceneSpec::default());
    };
    let mut v: Value = parse_json(p, &read_text(p)?)?;
    strip_version(p, &mut v, CliError::input)?;
    if let Some(pool) = v.pointer_mut("/leaf_class_pool") {
        names_to_ids(pool, t, "leaf_class_pool")
            .map_err(|e| CliError::input(e.message).in_file(p))?;
    }
    serde_json::from_value(v).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub detections: String,
    pub ground_truth: String,
}

/// Index of a scene set directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    #[serde(default = "one")]
    pub format_version: u32,
    pub scenes: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Accepts a scene set directory or its manifest file.
pub fn load_scene_set(path: &Path, t: &Taxonomy) -> CliResult<Vec<Scene>> {
    let manifest: PathBuf = if path.is_dir() {
        path.join(MANIFEST)
    } else {
        path.to_path_buf()
    };
    let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let doc: ManifestDoc = parse_json(&manifest, &read_text(&manifest)?)?;
    check_version(&manifest, doc.format_version)?;
    doc.scenes
        .iter()
        .map(|entry| {
            let det_path = root.join(&entry.detections);
            let dets = load_detections(&det_path, t)?;
            let image = dets.image.ok_or_else(|| {
                CliError::input(format!(
                    "{}: scene set entries need an image size",
                    det_path.display()
                ))
            })?;
            Ok(Scene {
                image,
                detections: dets.detections,
                ground_truth: load_ground_truth(&root.join(&entry.ground_truth), t)?,
            })
        })
        .collect()
}
