//! Spatial-semantic regularisation of multi-class object detections.
//!
//! A detector emits boxes with per-class scores. Every (box, class) pair
//! becomes a candidate point; points are clustered by max-sum affinity
//! propagation over a similarity that mixes box overlap with taxonomy
//! similarity, and the cluster exemplars are the final detections. Greedy
//! NMS baselines, an evaluation protocol, a brute-force oracle and a
//! synthetic benchmark generator are included.

pub mod baselines;
pub mod candidates;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod geometry;
pub mod inference;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod similarity;
pub mod synthesis;
pub mod taxonomy;
pub mod tuning;

pub use baselines::{ac_nms, greedy_nms, wc_ac_nms, NmsParams};
pub use candidates::{expand_detections, CandidateParams, CandidatePoint, CandidateSet, Detection};
pub use error::{Error, Result};
pub use evaluation::{
    compute_report, f1_score, match_detections, relabel_to_parents, EvalConfig, EvalReport,
    GroundTruthObject, Prediction,
};
pub use geometry::{iou, BoundingBox};
pub use inference::{
    mapc_cluster, objective_value, sapc_cluster, Assignment, InferenceConfig, ObjectiveWeights,
    RegularizedResult,
};
pub use oracle::{brute_force_regularize, enumerate_valid_assignments, OracleResult};
pub use pipeline::{run_method, Method, RunConfig};
pub use similarity::{build_similarity_model, SimilarityModel, SimilarityParams};
pub use synthesis::{generate_scene, Scene, SceneSpec};
pub use taxonomy::{load_taxonomy, ClassId, Taxonomy};
pub use tuning::{grid_search, ParamGrid, TuneObjective};
