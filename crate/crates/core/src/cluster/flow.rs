//! The constrained assignment step as a minimum-cost flow.
//!
//! Network: each point ships one unit to the sink through its cluster.
//! Cluster `h` has a "required" arc to the sink of capacity `kappa[h]`,
//! and all clusters share a single overflow node whose sink arc caps the
//! total slack at `m - sum(kappa)`. Total flow is `m`, the overflow path
//! absorbs at most the slack, so every required arc saturates and each
//! cluster receives at least its minimum. The overflow budget must be
//! shared: giving each cluster its own slack arc would let one cluster's
//! spare capacity excuse another's unmet quota once `k > 2`. All
//! capacities are integral and the constraint matrix is totally
//! unimodular, so the optimum found is integral.
//!
//! Units are routed by successive shortest paths, one point at a time in
//! index order, with Dijkstra over Johnson-reduced costs. Relaxation is
//! strict and point-to-cluster arcs are laid out in ascending cluster
//! order, so exact ties resolve toward the lowest cluster index.

use super::Assignment;
use crate::error::{Error, Result};
use std::collections::BinaryHeap;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    rev: usize,
    cap: i64,
    cost: f64,
}

struct FlowNet {
    graph: Vec<Vec<Edge>>,
}

impl FlowNet {
    fn new(n: usize) -> Self {
        Self {
            graph: vec![Vec::new(); n],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        let rev_from = self.graph[to].len();
        let rev_to = self.graph[from].len();
        self.graph[from].push(Edge {
            to,
            rev: rev_from,
            cap,
            cost,
        });
        self.graph[to].push(Edge {
            to: from,
            rev: rev_to,
            cap: 0,
            cost: -cost,
        });
    }
}

/// Max-heap entry ordered by smallest distance first. Distances are
/// non-negative, so the IEEE bit pattern preserves their order.
#[derive(PartialEq, Eq)]
struct HeapEntry {
    dist_bits: u64,
    node: usize,
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .dist_bits
            .cmp(&self.dist_bits)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Optimal constrained assignment of points to fixed centers.
pub fn assign_step(
    points: &[Vec<f64>],
    centers: &[Vec<f64>],
    kappa: &[usize],
) -> Result<Assignment> {
    let m = points.len();
    let k = centers.len();
    if m == 0 {
        return Err(Error::EmptyInput("assignment needs points".to_string()));
    }
    if k == 0 {
        return Err(Error::config("assignment needs at least one center"));
    }
    if kappa.len() != k {
        return Err(Error::config(format!(
            "kappa lists {} minimums for {k} centers",
            kappa.len()
        )));
    }
    let need: usize = kappa.iter().sum();
    if need > m {
        return Err(Error::config(format!(
            "minimum memberships sum to {need} but only {m} points exist"
        )));
    }
    let dim = points[0].len();
    for c in centers {
        if c.len() != dim {
            return Err(Error::shape(
                "centers and points have mixed dimensionality".to_string(),
            ));
        }
    }

    let cost = |i: usize, h: usize| -> f64 {
        let mut d = 0.0;
        for (a, b) in points[i].iter().zip(&centers[h]) {
            let diff = a - b;
            d += diff * diff;
        }
        0.5 * d
    };

    let overflow = m + k;
    let sink = overflow + 1;
    let n_nodes = sink + 1;
    let mut net = FlowNet::new(n_nodes);
    for i in 0..m {
        for h in 0..k {
            net.add_edge(i, m + h, 1, cost(i, h));
        }
    }
    let slack = (m - need) as i64;
    for h in 0..k {
        if kappa[h] > 0 {
            net.add_edge(m + h, sink, kappa[h] as i64, 0.0);
        }
        if slack > 0 {
            net.add_edge(m + h, overflow, slack, 0.0);
        }
    }
    if slack > 0 {
        net.add_edge(overflow, sink, slack, 0.0);
    }

    let mut potential = vec![0.0f64; n_nodes];
    let mut dist = vec![f64::INFINITY; n_nodes];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n_nodes];

    for source in 0..m {
        dist.fill(f64::INFINITY);
        parent.fill(None);
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry {
            dist_bits: 0u64,
            node: source,
        });
        while let Some(HeapEntry { dist_bits, node }) = heap.pop() {
            let d = f64::from_bits(dist_bits);
            if d > dist[node] {
                continue;
            }
            for (ei, e) in net.graph[node].iter().enumerate() {
                if e.cap <= 0 {
                    continue;
                }
                let nd = d + e.cost + potential[node] - potential[e.to];
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    parent[e.to] = Some((node, ei));
                    heap.push(HeapEntry {
                        dist_bits: nd.to_bits(),
                        node: e.to,
                    });
                }
            }
        }
        if !dist[sink].is_finite() {
            return Err(Error::Numeric(format!(
                "assignment flow could not route point {source}"
            )));
        }
        // Every potential advances by at most the sink distance; nodes the
        // search never reached advance by exactly that much. Skipping them
        // would let their outgoing reduced costs drift negative, silently
        // invalidating later Dijkstra runs.
        let d_sink = dist[sink];
        for v in 0..n_nodes {
            potential[v] += dist[v].min(d_sink);
        }
        // Augment one unit along the recorded shortest path.
        let mut v = sink;
        while v != source {
            let (u, ei) = parent[v].expect("path reaches the source");
            let rev = net.graph[u][ei].rev;
            net.graph[u][ei].cap -= 1;
            net.graph[v][rev].cap += 1;
            v = u;
        }
    }

    let mut tau = vec![vec![0.0; k]; m];
    for (i, row) in tau.iter_mut().enumerate() {
        let mut assigned = 0;
        for (ei, e) in net.graph[i].iter().enumerate() {
            // Forward arcs to clusters were added first, in cluster order.
            if ei < k && e.cap == 0 {
                row[e.to - m] = 1.0;
                assigned += 1;
            }
        }
        debug_assert_eq!(assigned, 1, "point {i} must sit in exactly one cluster");
    }
    let assignment = Assignment { tau };
    assignment.assert_feasible(kappa);
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::sse;
    use crate::rng::{self, Stream};
    use crate::testing::{brute_force_min_sse, nearest_center};

    fn pts(vals: &[f64]) -> Vec<Vec<f64>> {
        vals.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn zero_minimums_reduce_to_nearest_center() {
        let mut rng = rng::stream_rng(41, Stream::KmeansInit, &[0]);
        for _ in 0..20 {
            let points: Vec<Vec<f64>> = (0..15)
                .map(|_| {
                    vec![
                        rng::uniform(&mut rng, -4.0, 4.0),
                        rng::uniform(&mut rng, -4.0, 4.0),
                    ]
                })
                .collect();
            let centers: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    vec![
                        rng::uniform(&mut rng, -4.0, 4.0),
                        rng::uniform(&mut rng, -4.0, 4.0),
                    ]
                })
                .collect();
            let got = assign_step(&points, &centers, &[0; 4]).unwrap();
            assert_eq!(got.labels(), nearest_center(&points, &centers));
        }
    }

    #[test]
    fn equidistant_point_takes_the_lower_cluster() {
        let points = pts(&[0.5]);
        let centers = pts(&[0.0, 1.0]);
        let got = assign_step(&points, &centers, &[0, 0]).unwrap();
        assert_eq!(got.labels(), vec![0]);
    }

    #[test]
    fn paired_blobs_with_minimums() {
        let points = pts(&[0.0, 1.0, 10.0, 11.0]);
        let centers = pts(&[0.5, 10.5]);
        let got = assign_step(&points, &centers, &[2, 2]).unwrap();
        assert_eq!(got.labels(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn tight_minimums_override_proximity() {
        // Centers at 0 and 3; kappa (3,1) forces the point at 2 into the
        // first cluster even though the second center is closer.
        let points = pts(&[0.0, 1.0, 2.0, 3.0]);
        let centers = pts(&[0.0, 3.0]);
        let got = assign_step(&points, &centers, &[3, 1]).unwrap();
        assert_eq!(got.labels(), vec![0, 0, 0, 1]);
        let total = sse(&points, &centers, &got.tau);
        assert!((total - 2.5).abs() < 1e-12);
    }

    #[test]
    fn flow_cost_equals_brute_force_on_small_instances() {
        let mut rng = rng::stream_rng(97, Stream::KmeansInit, &[1]);
        for trial in 0..60 {
            let m = 4 + (trial % 9); // 4..=12
            let k = 2 + (trial % 2); // 2..=3
            let points: Vec<Vec<f64>> = (0..m)
                .map(|_| {
                    vec![
                        rng::uniform(&mut rng, -3.0, 3.0),
                        rng::uniform(&mut rng, -3.0, 3.0),
                    ]
                })
                .collect();
            let centers: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    vec![
                        rng::uniform(&mut rng, -3.0, 3.0),
                        rng::uniform(&mut rng, -3.0, 3.0),
                    ]
                })
                .collect();
            // Random feasible minimums, occasionally saturating.
            let mut kappa = vec![0usize; k];
            let mut budget = m;
            for item in kappa.iter_mut() {
                let cap = budget.min(m / k + 1);
                *item = (rng::uniform01(&mut rng) * (cap + 1) as f64) as usize;
                budget -= *item;
            }
            let got = assign_step(&points, &centers, &kappa).unwrap();
            let flow_cost = sse(&points, &centers, &got.tau);
            let oracle = brute_force_min_sse(&points, &centers, &kappa).unwrap();
            assert!(
                (flow_cost - oracle).abs() < 1e-9,
                "trial {trial} (m={m}, k={k}, kappa={kappa:?}): flow {flow_cost} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn saturated_minimums_partition_exactly() {
        // sum(kappa) == m: overflow capacity zero, sizes forced.
        let points = pts(&[0.0, 0.1, 0.2, 5.0, 5.1, 9.0]);
        let centers = pts(&[0.0, 5.0, 9.0]);
        let got = assign_step(&points, &centers, &[3, 2, 1]).unwrap();
        let labels = got.labels();
        let counts = labels.iter().fold(vec![0usize; 3], |mut acc, &l| {
            acc[l] += 1;
            acc
        });
        assert_eq!(counts, vec![3, 2, 1]);
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 2]);
    }

    #[test]
    fn infeasible_is_a_config_error() {
        let points = pts(&[0.0, 1.0]);
        let centers = pts(&[0.0, 1.0]);
        assert!(assign_step(&points, &centers, &[2, 1]).is_err());
        assert!(assign_step(&points, &centers, &[1]).is_err());
    }
}
