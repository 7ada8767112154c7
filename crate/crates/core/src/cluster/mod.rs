//! Constrained K-Means over organization locations, plus per-cluster
//! federated training and ensemble selection built on top of it.
//!
//! The assignment step is the linear program "minimize SSE subject to row
//! sums 1 and column sums >= kappa_h", solved exactly as a minimum-cost
//! flow (see [`flow`]); its constraint matrix is totally unimodular, so
//! the returned assignment is integral.

mod ensemble;
mod flow;

pub use ensemble::{
    ensemble_predict, ensemble_select, project_locations, run_clustered_fedgru, validation_split,
    ClusterTraining, ClusteredOutput, EnsemblePredictor, GlobalModel, GlobalModelSet,
    OrgClusterRecord, SelectionOutcome, EXHAUSTIVE_LIMIT,
};
pub use flow::assign_step;

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{self, Stream};

/// Minimum-membership K-Means configuration. `kappa[h]` is the least
/// number of points cluster `h` must receive.
#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub k: usize,
    pub kappa: Vec<usize>,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl ClusterConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("k must be at least 1"));
        }
        if self.kappa.len() != self.k {
            return Err(Error::config(format!(
                "kappa lists {} minimums for k = {}",
                self.kappa.len(),
                self.k
            )));
        }
        if self.k > n_points {
            return Err(Error::config(format!(
                "k = {} clusters over {n_points} points",
                self.k
            )));
        }
        let need: usize = self.kappa.iter().sum();
        if need > n_points {
            return Err(Error::config(format!(
                "minimum memberships sum to {need} but only {n_points} points exist"
            )));
        }
        if self.max_iters < 1 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if self.restarts < 1 {
            return Err(Error::config("restarts must be at least 1"));
        }
        Ok(())
    }
}

/// Point-to-cluster responsibilities. At an optimum of the assignment LP
/// every entry is exactly 0 or 1; [`Assignment::labels`] reads the result.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub tau: Vec<Vec<f64>>,
}

impl Assignment {
    pub fn n_points(&self) -> usize {
        self.tau.len()
    }

    pub fn k(&self) -> usize {
        self.tau.first().map_or(0, |row| row.len())
    }

    /// Cluster index per point; requires an integral assignment.
    pub fn labels(&self) -> Vec<usize> {
        self.tau
            .iter()
            .map(|row| {
                row.iter()
                    .position(|&v| v == 1.0)
                    .expect("assignment is integral after solve")
            })
            .collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let k = self.k();
        let mut sums = vec![0.0; k];
        for row in &self.tau {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// Row sums 1, column sums over the minimums, entries integral.
    pub fn assert_feasible(&self, kappa: &[usize]) {
        for (i, row) in self.tau.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!(
                (sum - 1.0).abs() < 1e-12,
                "row {i} sums to {sum}, expected 1"
            );
            for &v in row {
                assert!(v == 0.0 || v == 1.0, "row {i} holds non-integral {v}");
            }
        }
        for (h, (&col, &need)) in self.column_sums().iter().zip(kappa).enumerate() {
            assert!(
                col + 1e-12 >= need as f64,
                "cluster {h} holds {col} points, minimum is {need}"
            );
        }
    }
}

/// Outcome of one constrained K-Means run.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Assignment,
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterResult {
    pub fn final_sse(&self) -> f64 {
        *self.sse_trace.last().expect("trace never empty")
    }
}

/// SSE = sum_i sum_h tau[i][h] * (1/2) ||x_i - c_h||^2. The one-half
/// factor is part of the objective's definition here and is kept verbatim.
pub fn sse(points: &[Vec<f64>], centers: &[Vec<f64>], tau: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (point, row) in points.iter().zip(tau) {
        for (center, &t) in centers.iter().zip(row) {
            if t == 0.0 {
                continue;
            }
            let mut d = 0.0;
            for (a, b) in point.iter().zip(center) {
                let diff = a - b;
                d += diff * diff;
            }
            total += t * 0.5 * d;
        }
    }
    total
}

/// Center update: the tau-weighted mean of the member points, or the
/// previous center when a cluster received nothing.
pub fn update_step(
    points: &[Vec<f64>],
    tau: &[Vec<f64>],
    prev_centers: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let k = prev_centers.len();
    let dim = prev_centers.first().map_or(0, Vec::len);
    let mut centers = Vec::with_capacity(k);
    for h in 0..k {
        let mut weight = 0.0;
        let mut mean = vec![0.0; dim];
        for (point, row) in points.iter().zip(tau) {
            let t = row[h];
            if t == 0.0 {
                continue;
            }
            weight += t;
            for (m, x) in mean.iter_mut().zip(point) {
                *m += t * x;
            }
        }
        if weight > 0.0 {
            for m in &mut mean {
                *m /= weight;
            }
            centers.push(mean);
        } else {
            centers.push(prev_centers[h].clone());
        }
    }
    centers
}

const CONVERGENCE_EPS: f64 = 1e-9;

fn lloyd(
    points: &[Vec<f64>],
    init_centers: Vec<Vec<f64>>,
    cfg: &ClusterConfig,
) -> Result<ClusterResult> {
    let mut centers = init_centers;
    let mut trace = Vec::new();
    let mut assignment = assign_step(points, &centers, &cfg.kappa)?;
    trace.push(sse(points, &centers, &assignment.tau));
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let next_centers = update_step(points, &assignment.tau, &centers);
        let moved = centers
            .iter()
            .zip(&next_centers)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        centers = next_centers;
        if moved <= CONVERGENCE_EPS {
            break;
        }
        assignment = assign_step(points, &centers, &cfg.kappa)?;
        trace.push(sse(points, &centers, &assignment.tau));
    }
    // Final objective with the settled centers.
    trace.push(sse(points, &centers, &assignment.tau));
    assignment.assert_feasible(&cfg.kappa);
    Ok(ClusterResult {
        centers,
        assignment,
        sse_trace: trace,
        iterations,
    })
}

/// Lloyd alternation with restarts: each restart seeds its initial centers
/// from `cfg.restarts` distinct points drawn per (seed, restart index);
/// the lowest-SSE run wins, earlier restarts winning ties.
pub fn constrained_kmeans(points: &[Vec<f64>], cfg: &ClusterConfig) -> Result<ClusterResult> {
    cfg.validate(points.len())?;
    if points.is_empty() {
        return Err(Error::EmptyInput("clustering needs points".to_string()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("points have mixed dimensionality".to_string()));
    }

    let runs = exec::map_indices(cfg.restarts, |restart| {
        let mut rng = rng::stream_rng(cfg.seed, Stream::KmeansInit, &[restart as u64]);
        let picks = rng::sample_without_replacement(&mut rng, points.len(), cfg.k);
        let init: Vec<Vec<f64>> = picks.into_iter().map(|i| points[i].clone()).collect();
        lloyd(points, init, cfg)
    });

    let mut best: Option<ClusterResult> = None;
    for run in runs {
        let run = run?;
        let replace = match &best {
            None => true,
            Some(b) => run.final_sse() < b.final_sse(),
        };
        if replace {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}
