//! Independent oracles for the numeric test suites.
//!
//! Everything here is deliberately written against the public interfaces
//! and avoids the optimized code paths it is used to check: the gradient
//! oracle differentiates the loss numerically, the clustering oracles
//! enumerate assignments outright, and the cell reference spells out the
//! gate equations scalar by scalar.

use crate::data::WindowedSample;
use crate::error::Result;
use crate::gru::{batch_loss, GruLayerParams, GruNetwork, LossConfig};

/// Central finite differences of the batch loss with respect to every
/// parameter, in canonical flatten order. Clipping is always off here:
/// the derivative of a clipped gradient is not the gradient of the loss.
pub fn fd_gradient(
    net: &GruNetwork,
    samples: &[WindowedSample],
    lambda: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    let cfg = LossConfig {
        lambda,
        clip_norm: None,
    };
    let base = net.flatten();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += epsilon;
        let mut minus = base.clone();
        minus[i] -= epsilon;
        let lp = batch_loss(
            &GruNetwork::unflatten(&plus, net.input_size, &net.hidden_sizes)?,
            samples,
            &cfg,
        )?;
        let lm = batch_loss(
            &GruNetwork::unflatten(&minus, net.input_size, &net.hidden_sizes)?,
            samples,
            &cfg,
        )?;
        grad.push((lp - lm) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// Maximum per-coordinate relative error between two gradient vectors,
/// with the usual unit floor on the denominator so near-zero coordinates
/// are compared absolutely instead of dividing by noise.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / f64::max(1.0, f64::max(a.abs(), n.abs())))
        .fold(0.0, f64::max)
}

/// Scalar-by-scalar GRU cell, kept free of the matrix helpers used by the
/// production forward pass.
pub fn reference_cell(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> Vec<f64> {
    let hidden = p.hidden_size();
    let input = p.input_size();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0; hidden];
    for i in 0..hidden {
        let mut az = p.b_z[i];
        let mut ar = p.b_r[i];
        let mut ah = p.b_h[i];
        for j in 0..input {
            az += p.w_z.data[i * input + j] * x[j];
            ar += p.w_r.data[i * input + j] * x[j];
            ah += p.w_h.data[i * input + j] * x[j];
        }
        let mut uz = 0.0;
        let mut ur = 0.0;
        let mut uh = 0.0;
        for j in 0..hidden {
            uz += p.u_z.data[i * hidden + j] * h_prev[j];
            ur += p.u_r.data[i * hidden + j] * h_prev[j];
            uh += p.u_h.data[i * hidden + j] * h_prev[j];
        }
        let z = sig(az + uz);
        let r = sig(ar + ur);
        let cand = (ah + r * uh).tanh();
        h[i] = z * h_prev[i] + (1.0 - z) * cand;
    }
    h
}

fn half_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    0.5 * s
}

/// Minimum feasible assignment cost by exhaustive enumeration: every
/// mapping of points to clusters whose cluster sizes meet the minimums,
/// scored as the half-squared-distance sum. Returns `None` when the
/// minimums cannot be met. Only sane for small instances.
pub fn brute_force_min_sse(
    points: &[Vec<f64>],
    centers: &[Vec<f64>],
    kappa: &[usize],
) -> Option<f64> {
    let m = points.len();
    let k = centers.len();
    assert_eq!(k, kappa.len());
    if kappa.iter().sum::<usize>() > m {
        return None;
    }
    let cost: Vec<Vec<f64>> = points
        .iter()
        .map(|p| centers.iter().map(|c| half_sq_dist(p, c)).collect())
        .collect();
    let mut best = f64::INFINITY;
    let mut counts = vec![0usize; k];
    fn rec(
        i: usize,
        m: usize,
        k: usize,
        acc: f64,
        cost: &[Vec<f64>],
        kappa: &[usize],
        counts: &mut Vec<usize>,
        best: &mut f64,
    ) {
        if acc >= *best {
            return;
        }
        // Feasibility pruning: remaining points must be able to cover the
        // still-unmet minimums. At a leaf this demands a deficit of zero,
        // so quota-violating assignments are never accepted.
        let deficit: usize = kappa
            .iter()
            .zip(counts.iter())
            .map(|(&need, &have)| need.saturating_sub(have))
            .sum();
        if deficit > m - i {
            return;
        }
        if i == m {
            *best = acc;
            return;
        }
        for h in 0..k {
            counts[h] += 1;
            rec(i + 1, m, k, acc + cost[i][h], cost, kappa, counts, best);
            counts[h] -= 1;
        }
    }
    rec(0, m, k, 0.0, &cost, kappa, &mut counts, &mut best);
    if best.is_finite() {
        Some(best)
    } else {
        None
    }
}

/// Nearest-center assignment with lowest-index tie-breaking, the expected
/// behavior of the constrained assignment when all minimums are zero.
pub fn nearest_center(points: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (h, c) in centers.iter().enumerate() {
                let d = half_sq_dist(p, c);
                if d < best_d {
                    best_d = d;
                    best = h;
                }
            }
            best
        })
        .collect()
}

/// Exhaustive ensemble search: every non-empty subset of models, scored by
/// the MAE of its prediction average. Ties prefer smaller subsets, then
/// the lexicographically smaller member list.
pub fn exhaustive_best_subset(model_preds: &[Vec<f64>], targets: &[f64]) -> (Vec<usize>, f64) {
    let k = model_preds.len();
    assert!(k >= 1 && k <= 20, "exhaustive search needs 1..=20 models");
    for preds in model_preds {
        assert_eq!(preds.len(), targets.len());
    }
    let mut best_subset: Option<Vec<usize>> = None;
    let mut best_mae = f64::INFINITY;
    for mask in 1u32..(1 << k) {
        let members: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let mut abs_sum = 0.0;
        for (j, &t) in targets.iter().enumerate() {
            let mean: f64 =
                members.iter().map(|&i| model_preds[i][j]).sum::<f64>() / members.len() as f64;
            abs_sum += (mean - t).abs();
        }
        let mae = abs_sum / targets.len() as f64;
        let better = match &best_subset {
            None => true,
            Some(current) => {
                mae < best_mae
                    || (mae == best_mae
                        && (members.len() < current.len()
                            || (members.len() == current.len() && members < *current)))
            }
        };
        if better {
            best_mae = mae;
            best_subset = Some(members);
        }
    }
    (best_subset.expect("at least one subset"), best_mae)
}
