//! Exhaustive grid search over run-configuration knobs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_scenes, EvalReport};
use crate::pipeline::{Method, RunConfig};
use crate::synthesis::Scene;
use crate::taxonomy::Taxonomy;

pub const DEFAULT_GRID_CAP: usize = 10_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub axes: BTreeMap<String, Vec<f64>>,
}

impl ParamGrid {
    pub fn size(&self) -> usize {
        self.axes
            .values()
            .map(Vec::len)
            .try_fold(1usize, |acc, n| acc.checked_mul(n))
            .unwrap_or(usize::MAX)
    }

    pub fn validate(&self, cap: usize) -> Result<()> {
        for (name, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::InvalidConfig(format!("grid axis {name} is empty")));
            }
            RunConfig::default().get_param(name)?;
        }
        let size = self.size();
        if size > cap {
            return Err(Error::GridTooLarge { size, cap });
        }
        Ok(())
    }

    /// Every configuration as a name-ordered parameter vector, the last
    /// axis varying fastest.
    pub fn points(&self) -> Vec<BTreeMap<String, f64>> {
        let mut out = vec![BTreeMap::new()];
        for (name, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), *v);
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// Grid used when tuning `method` without an explicit grid.
    pub fn default_for(method: Method) -> Self {
        let axes: Vec<(&str, Vec<f64>)> = match method {
            Method::Mapc => vec![
                ("lambda", vec![0.3, 0.5, 0.7, 0.9]),
                ("theta_bg", vec![0.2, 0.3, 0.4]),
                ("w_a", vec![0.02, 0.05, 0.1, 0.2, 0.4]),
                ("w_d", vec![0.0, 0.05, 0.2, 0.5]),
            ],
            Method::Sapc | Method::SapcAcNms => vec![
                ("theta_bg", vec![0.2, 0.3, 0.4]),
                ("w_a", vec![0.02, 0.05, 0.1, 0.2, 0.4]),
                ("w_d", vec![0.0, 0.05, 0.2, 0.5]),
                ("iou_across", vec![0.1, 0.3, 0.5, 0.7, 0.9]),
            ],
            Method::WcAcNms => vec![
                ("theta_bg", vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7]),
                ("iou_within", vec![0.3, 0.5, 0.7, 0.9]),
                ("iou_across", vec![0.1, 0.3, 0.5, 0.7, 0.9]),
            ],
            Method::AcNms => vec![
                ("theta_bg", vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7]),
                ("iou_across", vec![0.1, 0.3, 0.5, 0.7, 0.9]),
            ],
        };
        Self {
            axes: axes.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TuneObjective {
    F1,
    /// Precision among configurations reaching the recall floor; the rest score 0.
    PrecisionAtRecall {
        floor: f64,
    },
}

impl TuneObjective {
    pub fn score(&self, r: &EvalReport) -> f64 {
        match *self {
            TuneObjective::F1 => r.f1,
            TuneObjective::PrecisionAtRecall { floor } => {
                if r.recall >= floor {
                    r.precision
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub params: BTreeMap<String, f64>,
    pub report: EvalReport,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub method: Method,
    pub best_params: BTreeMap<String, f64>,
    pub best_score: f64,
    pub best_report: EvalReport,
    /// One row per configuration, in grid order.
    pub table: Vec<GridRow>,
}

fn lexicographic(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> std::cmp::Ordering {
    a.values()
        .zip(b.values())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Evaluates every configuration on the pooled training scenes and returns
/// the best one; ties go to the lexicographically smaller parameter vector.
pub fn grid_search(
    grid: &ParamGrid,
    scenes: &[Scene],
    t: &Taxonomy,
    method: Method,
    base: &RunConfig,
    objective: TuneObjective,
    cap: usize,
) -> Result<TuneResult> {
    grid.validate(cap)?;
    base.validate()?;
    let table: Vec<GridRow> = grid
        .points()
        .into_par_iter()
        .map(|params| {
            let cfg = base.with_params(&params)?;
            let report = evaluate_scenes(method, &cfg, scenes, t)?;
            Ok(GridRow {
                score: objective.score(&report),
                params,
                report,
            })
        })
        .collect::<Result<_>>()?;
    let best = table
        .iter()
        .reduce(|best, row| {
            let better = row.score > best.score
                || (row.score == best.score && lexicographic(&row.params, &best.params).is_lt());
            if better {
                row
            } else {
                best
            }
        })
        .expect("grid has at least one point");
    Ok(TuneResult {
        method,
        best_params: best.params.clone(),
        best_score: best.score,
        best_report: best.report,
        table,
    })
}
