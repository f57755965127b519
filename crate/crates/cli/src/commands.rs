//! One function per subcommand. Each returns the bytes it produced so the
//! caller decides between a file and standard output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mapc::evaluation::{compute_report, evaluate_predictions, sweep, EvalReport, SweepSpec};
use mapc::inference::{iteration_trace, Assignment};
use mapc::pipeline::MethodOutput;
use mapc::synthesis::generate_suite;
use mapc::tuning::{grid_search, TuneResult, DEFAULT_GRID_CAP};
use mapc::{
    brute_force_regularize, build_similarity_model, expand_detections, Method, ParamGrid,
    RunConfig, Taxonomy, TuneObjective,
};
use serde::{Deserialize, Serialize};

use crate::docs::{
    self, DetectionsDoc, GroundTruthDoc, ManifestDoc, ManifestEntry, ResultEntry, ResultsDoc,
    FORMAT_VERSION,
};
use crate::error::{CliError, CliResult};

/// Inputs shared by the commands that read one detections file.
pub struct SceneInputs<'a> {
    pub detections: &'a Path,
    pub taxonomy: Option<&'a Path>,
    pub config: Option<&'a Path>,
}

struct Loaded {
    taxonomy: Taxonomy,
    config: RunConfig,
    detections: Vec<mapc::Detection>,
}

fn load(inputs: &SceneInputs<'_>) -> CliResult<Loaded> {
    let taxonomy = docs::load_taxonomy_file(inputs.taxonomy)?;
    let config = docs::load_config(inputs.config, &taxonomy)?;
    let detections = docs::load_detections(inputs.detections, &taxonomy)?.detections;
    Ok(Loaded {
        taxonomy,
        config,
        detections,
    })
}

pub fn log(msg: impl AsRef<str>) {
    eprintln!("mapc: {}", msg.as_ref());
}

fn results_doc(out: &MethodOutput, t: &Taxonomy) -> CliResult<ResultsDoc> {
    let clustering = out.clustering.as_ref();
    let detections = out
        .selected
        .iter()
        .map(|p| {
            Ok(ResultEntry {
                bbox: out.candidates.boxes[p.box_id].to_array(),
                class_name: t.name(p.class_id)?.to_string(),
                class_id: p.class_id.0,
                score: p.score,
                exemplar: clustering.is_some(),
                cluster_id: clustering.map(|_| p.point_id),
                cluster_size: out.cluster_size(p.point_id),
            })
        })
        .collect::<CliResult<_>>()?;
    Ok(ResultsDoc {
        format_version: FORMAT_VERSION,
        method: out.method.name().to_string(),
        candidate_count: out.candidates.len(),
        objective_value: clustering.map(|c| c.objective_value),
        iterations_run: clustering.map(|c| c.iterations_run),
        converged: clustering.map(|c| c.converged),
        detections,
    })
}

#[derive(Debug, Serialize)]
struct Snapshot<'a> {
    iteration: usize,
    exemplars: Vec<usize>,
    assignment: &'a Assignment,
}

#[derive(Debug, Serialize)]
struct TracePoint {
    point_id: usize,
    box_id: usize,
    class_name: String,
    score: f64,
}

#[derive(Debug, Serialize)]
struct TraceDoc<'a> {
    format_version: u32,
    method: &'a str,
    points: Vec<TracePoint>,
    iterations_run: usize,
    converged: bool,
    convergence_window: usize,
    snapshots: Vec<Snapshot<'a>>,
}

fn trace_doc(out: &MethodOutput, t: &Taxonomy, cfg: &RunConfig) -> CliResult<String> {
    let c = out.clustering.as_ref().ok_or_else(|| {
        CliError::config(format!("method {} does not record a trace", out.method))
    })?;
    let snapshots: &[Assignment] = if out.candidates.is_empty() {
        &[]
    } else {
        iteration_trace(c)?
    };
    let points = out
        .candidates
        .points
        .iter()
        .map(|p| {
            Ok(TracePoint {
                point_id: p.point_id,
                box_id: p.box_id,
                class_name: t.name(p.class_id)?.to_string(),
                score: p.score,
            })
        })
        .collect::<CliResult<_>>()?;
    docs::to_json(&TraceDoc {
        format_version: FORMAT_VERSION,
        method: out.method.name(),
        points,
        iterations_run: c.iterations_run,
        converged: c.converged,
        convergence_window: cfg.inference.convergence_window,
        snapshots: snapshots
            .iter()
            .enumerate()
            .map(|(iteration, a)| Snapshot {
                iteration,
                exemplars: a.exemplars(),
                assignment: a,
            })
            .collect(),
    })
}

/// Output of `regularize`: the results document and, when requested, the trace.
pub struct Regularized {
    pub results: String,
    pub trace: Option<String>,
}

pub fn regularize(
    inputs: &SceneInputs<'_>,
    method: Method,
    want_trace: bool,
) -> CliResult<Regularized> {
    let Loaded {
        taxonomy,
        mut config,
        detections,
    } = load(inputs)?;
    if want_trace {
        if !method.is_clustering() {
            return Err(CliError::config(format!(
                "--trace needs a clustering method, got {method}"
            )));
        }
        config.inference.trace_enabled = true;
    }
    let out = mapc::run_method(method, &detections, &taxonomy, &config)?;
    log(format!(
        "{method}: {} detections, {} candidate points, {} kept",
        detections.len(),
        out.candidates.len(),
        out.selected.len()
    ));
    let trace = if want_trace {
        Some(trace_doc(&out, &taxonomy, &config)?)
    } else {
        None
    };
    Ok(Regularized {
        results: docs::to_json(&results_doc(&out, &taxonomy)?)?,
        trace,
    })
}

pub fn trace(inputs: &SceneInputs<'_>, method: Method) -> CliResult<String> {
    if !method.is_clustering() {
        return Err(CliError::config(format!(
            "trace needs a clustering method, got {method}"
        )));
    }
    let Loaded {
        taxonomy,
        mut config,
        detections,
    } = load(inputs)?;
    config.inference.trace_enabled = true;
    let out = mapc::run_method(method, &detections, &taxonomy, &config)?;
    trace_doc(&out, &taxonomy, &config)
}

#[derive(Debug, Serialize)]
struct OracleDoc {
    format_version: u32,
    point_count: usize,
    enumerated_count: usize,
    best_value: f64,
    best_assignment: Assignment,
    exemplars: Vec<usize>,
}

/// Exhaustive optimum of the objective on a small detections file.
pub fn oracle(inputs: &SceneInputs<'_>) -> CliResult<String> {
    let Loaded {
        taxonomy,
        config,
        detections,
    } = load(inputs)?;
    config.validate()?;
    let doc = match expand_detections(&detections, &config.candidate_params()) {
        Err(mapc::Error::EmptyCandidateSet) => OracleDoc {
            format_version: FORMAT_VERSION,
            point_count: 0,
            enumerated_count: 1,
            best_value: 0.0,
            best_assignment: Assignment(Vec::new()),
            exemplars: Vec::new(),
        },
        Err(e) => return Err(e.into()),
        Ok(cands) => {
            let model = build_similarity_model(&cands, &taxonomy, &config.similarity)?;
            let r = brute_force_regularize(&cands, &model, &config.weights)?;
            log(format!(
                "oracle: {} assignments enumerated",
                r.enumerated_count
            ));
            OracleDoc {
                format_version: FORMAT_VERSION,
                point_count: cands.len(),
                enumerated_count: r.enumerated_count,
                best_value: r.best_value,
                exemplars: r.best_assignment.exemplars(),
                best_assignment: r.best_assignment,
            }
        }
    };
    docs::to_json(&doc)
}

#[derive(Debug, Serialize)]
struct EvalDoc {
    format_version: u32,
    report: EvalReport,
}

pub struct Evaluated {
    pub json: String,
    pub table: String,
    pub csv: String,
}

pub fn eval(
    predictions: &Path,
    ground_truth: &Path,
    taxonomy: Option<&Path>,
    config: Option<&Path>,
) -> CliResult<Evaluated> {
    let t = docs::load_taxonomy_file(taxonomy)?;
    let cfg = docs::load_config(config, &t)?;
    let pred = docs::load_predictions(predictions, &t)?;
    let gt = docs::load_ground_truth(ground_truth, &t)?;
    let report = compute_report(&evaluate_predictions(&pred, &gt, &t, &cfg.eval)?);
    Ok(Evaluated {
        json: docs::to_json(&EvalDoc {
            format_version: FORMAT_VERSION,
            report,
        })?,
        table: report_table(&report),
        csv: report_csv(&report)?,
    })
}

pub fn report_table(r: &EvalReport) -> String {
    let pct = |x: f64| format!("{:.2}%", 100.0 * x);
    let rows = [
        ("precision", pct(r.precision)),
        ("recall", pct(r.recall)),
        ("f1", pct(r.f1)),
        ("wrong label", pct(r.wrong_label_fraction)),
        ("wrong overlap", pct(r.wrong_overlap_fraction)),
        ("true positives", r.tp.to_string()),
        ("false positives", r.fp.to_string()),
        ("false negatives", r.fn_.to_string()),
    ];
    let mut s = String::new();
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<16} {v:>8}");
    }
    s
}

fn csv_string(
    write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| CliError::internal(e.to_string()))?;
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::internal(e.to_string()))
}

fn report_csv(r: &EvalReport) -> CliResult<String> {
    csv_string(|w| {
        w.write_record([
            "precision",
            "recall",
            "f1",
            "wrong_label_fraction",
            "wrong_overlap_fraction",
            "tp",
            "fp",
            "fn",
        ])?;
        w.write_record([
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            r.wrong_label_fraction.to_string(),
            r.wrong_overlap_fraction.to_string(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
        ])
    })
}

/// Parses `0.1,0.2,0.3`.
pub fn parse_values(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::config(format!("--values: {v:?} is not a number")))
        })
        .collect()
}

pub fn sweep_cmd(
    scenes: &Path,
    method: Method,
    parameter: &str,
    values: &[f64],
    taxonomy: Option<&Path>,
    config: Option<&Path>,
) -> CliResult<String> {
    let t = docs::load_taxonomy_file(taxonomy)?;
    let cfg = docs::load_config(config, &t)?;
    let scenes = docs::load_scene_set(scenes, &t)?;
    let spec = SweepSpec {
        parameter: parameter.to_string(),
        values: values.to_vec(),
    };
    let points = sweep(method, &cfg, &spec, &scenes, &t)?;
    log(format!(
        "sweep: {} values over {} scenes",
        points.len(),
        scenes.len()
    ));
    csv_string(|w| {
        w.write_record(["value", "precision", "recall", "f1"])?;
        for p in &points {
            w.write_record([
                p.value.to_string(),
                p.report.precision.to_string(),
                p.report.recall.to_string(),
                p.report.f1.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// File names of scene `i` inside a scene set directory.
pub fn scene_file_names(i: usize) -> (String, String, String) {
    let name = format!("scene_{i:04}");
    (
        format!("{name}.detections.json"),
        format!("{name}.ground_truth.json"),
        name,
    )
}

/// Writes `count` scenes plus a manifest into `out`; returns the manifest path.
pub fn synth(
    spec: Option<&Path>,
    taxonomy: Option<&Path>,
    count: usize,
    seed: Option<u64>,
    out: &Path,
) -> CliResult<PathBuf> {
    let t = docs::load_taxonomy_file(taxonomy)?;
    let mut spec = docs::load_scene_spec(spec, &t)?;
    if let Some(seed) = seed {
        spec.rng_seed = seed;
    }
    if count == 0 {
        return Err(CliError::config("--count must be at least 1"));
    }
    let scenes = generate_suite(&spec, count, &t)?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::config(format!("{}: cannot create: {e}", out.display())))?;
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let (det_name, gt_name, name) = scene_file_names(i);
        let dets = DetectionsDoc::from_detections(Some(scene.image), &scene.detections, &t)?;
        let gt = GroundTruthDoc::from_objects(Some(scene.image), &scene.ground_truth, &t)?;
        docs::write_text(&out.join(&det_name), &docs::to_json(&dets)?)?;
        docs::write_text(&out.join(&gt_name), &docs::to_json(&gt)?)?;
        entries.push(ManifestEntry {
            name,
            detections: det_name,
            ground_truth: gt_name,
        });
    }
    let manifest = out.join(docs::MANIFEST);
    docs::write_text(
        &manifest,
        &docs::to_json(&ManifestDoc {
            format_version: FORMAT_VERSION,
            scenes: entries,
        })?,
    )?;
    log(format!("synth: wrote {count} scenes to {}", out.display()));
    Ok(manifest)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    #[serde(default)]
    format_version: Option<u32>,
    axes: BTreeMap<String, Vec<f64>>,
}

fn load_grid(path: &Path) -> CliResult<ParamGrid> {
    let text = docs::read_text(path).map_err(|e| CliError::config(e.message))?;
    let doc: GridDoc = docs::parse_json(path, &text).map_err(|e| CliError::config(e.message))?;
    if doc.format_version.is_some_and(|v| v != FORMAT_VERSION) {
        return Err(CliError::config(format!(
            "{}: unsupported format_version",
            path.display()
        )));
    }
    Ok(ParamGrid { axes: doc.axes })
}

/// `f1` or `precision@recall=FLOOR`.
pub fn parse_objective(s: &str) -> CliResult<TuneObjective> {
    if s == "f1" {
        return Ok(TuneObjective::F1);
    }
    s.strip_prefix("precision@recall=")
        .and_then(|f| f.parse::<f64>().ok())
        .filter(|f| (0.0..=1.0).contains(f))
        .map(|floor| TuneObjective::PrecisionAtRecall { floor })
        .ok_or_else(|| {
            CliError::config(format!(
                "unknown objective {s:?}; use f1 or precision@recall=FLOOR"
            ))
        })
}

#[derive(Debug, Serialize)]
struct TuneDoc<'a> {
    format_version: u32,
    objective: TuneObjective,
    #[serde(flatten)]
    result: &'a TuneResult,
    /// Base configuration with the best parameters applied.
    config: RunConfig,
}

pub struct TuneArgs<'a> {
    pub scenes: &'a Path,
    pub method: Method,
    pub grid: Option<&'a Path>,
    pub objective: TuneObjective,
    pub cap: Option<usize>,
    pub taxonomy: Option<&'a Path>,
    pub config: Option<&'a Path>,
}

pub fn tune(args: &TuneArgs<'_>) -> CliResult<String> {
    let t = docs::load_taxonomy_file(args.taxonomy)?;
    let base = docs::load_config(args.config, &t)?;
    let grid = match args.grid {
        Some(p) => load_grid(p)?,
        None => ParamGrid::default_for(args.method),
    };
    let scenes = docs::load_scene_set(args.scenes, &t)?;
    log(format!(
        "tune: {} configurations over {} scenes",
        grid.size(),
        scenes.len()
    ));
    let result = grid_search(
        &grid,
        &scenes,
        &t,
        args.method,
        &base,
        args.objective,
        args.cap.unwrap_or(DEFAULT_GRID_CAP),
    )?;
    docs::to_json(&TuneDoc {
        format_version: FORMAT_VERSION,
        objective: args.objective,
        config: base.with_params(&result.best_params)?,
        result: &result,
    })
}
