use super::{Assignment, Clustering, ConvergenceMonitor, InferenceConfig};
use crate::error::{Error, Result};
use crate::similarity::SimilarityModel;

/// Classic clustering objective: exemplars pay their self-similarity, members
/// earn their similarity to the exemplar. No background cluster, so any
/// background label is a violation.
pub fn apc_objective_value(a: &Assignment, m: &SimilarityModel) -> Result<f64> {
    let n = m.n();
    if a.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: a.len(),
        });
    }
    if a.0.iter().any(|x| x.is_none()) || !a.is_valid(None) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((0..n)
        .map(|i| match a.get(i) {
            Some(j) if j == i => m.self_sim(i),
            Some(j) => m.pair(i, j),
            None => unreachable!(),
        })
        .sum())
}

fn similarity(m: &SimilarityModel, i: usize, j: usize) -> f64 {
    if i == j {
        m.self_sim(i)
    } else {
        m.pair(i, j)
    }
}

fn decode(m: &SimilarityModel, rho: &[f64], alpha: &[f64]) -> Assignment {
    let n = m.n();
    let evidence: Vec<f64> = (0..n).map(|i| rho[i * n + i] + alpha[i * n + i]).collect();
    let mut exemplars: Vec<usize> = (0..n).filter(|&i| evidence[i] > 0.0).collect();
    if exemplars.is_empty() {
        let mut best = 0;
        for i in 1..n {
            if evidence[i] > evidence[best] {
                best = i;
            }
        }
        exemplars.push(best);
    }
    let assign = (0..n)
        .map(|i| {
            if exemplars.contains(&i) {
                return Some(i);
            }
            let mut best = exemplars[0];
            for &j in &exemplars[1..] {
                if m.pair(i, j) > m.pair(i, best) {
                    best = j;
                }
            }
            Some(best)
        })
        .collect();
    Assignment(assign)
}

/// Standard affinity propagation on the similarity model, without
/// background, repellence or box constraints.
pub fn apc_cluster(m: &SimilarityModel, cfg: &InferenceConfig) -> Result<Clustering> {
    cfg.validate()?;
    let n = m.n();
    if n == 0 {
        return Err(Error::EmptyCandidateSet);
    }
    let d = cfg.damping;
    let mut rho = vec![0.0; n * n];
    let mut alpha = vec![0.0; n * n];
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_window);
    let mut trace = cfg
        .trace_enabled
        .then(|| vec![Assignment::all_background(n)]);
    let mut assignment = Assignment::all_background(n);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        for i in 0..n {
            let row = i * n;
            let (mut best, mut best_idx, mut second) =
                (f64::NEG_INFINITY, usize::MAX, f64::NEG_INFINITY);
            for q in 0..n {
                let v = similarity(m, i, q) + alpha[row + q];
                if v > best {
                    second = best;
                    best = v;
                    best_idx = q;
                } else if v > second {
                    second = v;
                }
            }
            for j in 0..n {
                let competitor = if j == best_idx { second } else { best };
                // A lone point has no competitor; its responsibility is its preference.
                let competitor = if competitor.is_finite() {
                    competitor
                } else {
                    0.0
                };
                let new = similarity(m, i, j) - competitor;
                rho[row + j] = d * rho[row + j] + (1.0 - d) * new;
            }
        }
        for j in 0..n {
            let positive: f64 = (0..n)
                .filter(|&k| k != j)
                .map(|k| rho[k * n + j].max(0.0))
                .sum();
            for i in 0..n {
                let new = if i == j {
                    positive
                } else {
                    (rho[j * n + j] + positive - rho[i * n + j].max(0.0)).min(0.0)
                };
                alpha[i * n + j] = d * alpha[i * n + j] + (1.0 - d) * new;
            }
        }
        assignment = decode(m, &rho, &alpha);
        if let Some(t) = trace.as_mut() {
            t.push(assignment.clone());
        }
        // A lone point exchanges no messages; one sweep already fixes the sign of its belief.
        if n == 1 || monitor.observe(assignment.exemplar_set()) {
            converged = true;
            break;
        }
    }

    let objective_value = apc_objective_value(&assignment, m)?;
    Ok(Clustering {
        assignment,
        objective_value,
        iterations_run: iterations,
        converged,
        trace,
    })
}
