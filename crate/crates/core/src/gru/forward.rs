//! Forward pass over an input window, with and without a gradient cache.

use super::{GruLayerParams, GruNetwork};
use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::exec;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate activations of one cell step.
#[derive(Debug, Clone)]
pub struct CellStep {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub hcand: Vec<f64>,
}

/// One GRU cell step: consumes `x_t` and `h_{t-1}`, produces `h_t` and the
/// gate activations needed for backpropagation.
pub fn cell_forward(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> Result<(Vec<f64>, CellStep)> {
    let hidden = p.hidden_size();
    if x.len() != p.input_size() {
        return Err(Error::shape(format!(
            "cell input has length {}, layer expects {}",
            x.len(),
            p.input_size()
        )));
    }
    if h_prev.len() != hidden {
        return Err(Error::shape(format!(
            "hidden state has length {}, layer expects {hidden}",
            h_prev.len()
        )));
    }

    let mut z = p.b_z.clone();
    p.w_z.matvec_add(x, &mut z);
    p.u_z.matvec_add(h_prev, &mut z);
    for v in &mut z {
        *v = sigmoid(*v);
    }

    let mut r = p.b_r.clone();
    p.w_r.matvec_add(x, &mut r);
    p.u_r.matvec_add(h_prev, &mut r);
    for v in &mut r {
        *v = sigmoid(*v);
    }

    // h'_t = tanh(W_h x + r .* (U_h h_prev) + b_h); the reset gate scales
    // the recurrent term, not h_prev itself.
    let mut uh = vec![0.0; hidden];
    p.u_h.matvec_add(h_prev, &mut uh);
    let mut hcand = p.b_h.clone();
    p.w_h.matvec_add(x, &mut hcand);
    for i in 0..hidden {
        hcand[i] = (hcand[i] + r[i] * uh[i]).tanh();
    }

    let mut h = vec![0.0; hidden];
    for i in 0..hidden {
        h[i] = z[i] * h_prev[i] + (1.0 - z[i]) * hcand[i];
    }
    Ok((h, CellStep { z, r, hcand }))
}

/// Per-layer trace of a forward pass: hidden states `h[0..=T]` (index 0 is
/// the zero initial state) and gate activations per step.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub h: Vec<Vec<f64>>,
    pub steps: Vec<CellStep>,
}

/// Everything the backward pass needs besides the raw input window.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerTrace>,
}

/// Runs the network over a scalar input window. Returns the prediction and
/// the cache for backpropagation.
pub fn forward(net: &GruNetwork, window: &[f64]) -> Result<(f64, ForwardCache)> {
    if net.input_size != 1 {
        return Err(Error::shape(
            "scalar windows require a network with input_size 1".to_string(),
        ));
    }
    if window.is_empty() {
        return Err(Error::shape("input window is empty".to_string()));
    }
    let steps = window.len();
    let mut cache = ForwardCache {
        layers: net
            .hidden_sizes
            .iter()
            .map(|&hidden| LayerTrace {
                h: vec![vec![0.0; hidden]],
                steps: Vec::with_capacity(steps),
            })
            .collect(),
    };

    for t in 0..steps {
        let mut input = vec![window[t]];
        for (l, layer) in net.layers.iter().enumerate() {
            let trace = &mut cache.layers[l];
            let h_prev = trace.h.last().expect("seeded with h0");
            let (h, step) = cell_forward(&input, h_prev, layer)?;
            input = h.clone();
            trace.h.push(h);
            trace.steps.push(step);
        }
    }

    let top = cache.layers.last().expect("at least one layer");
    let h_last = top.h.last().expect("at least one step");
    let mut pred = net.head_b;
    for (w, h) in net.head_w.iter().zip(h_last) {
        pred += w * h;
    }
    Ok((pred, cache))
}

/// Cache-free forward pass for inference.
fn forward_only(net: &GruNetwork, window: &[f64]) -> Result<f64> {
    let mut states: Vec<Vec<f64>> = net.hidden_sizes.iter().map(|&h| vec![0.0; h]).collect();
    for &x in window {
        let mut input = vec![x];
        for (l, layer) in net.layers.iter().enumerate() {
            let (h, _) = cell_forward(&input, &states[l], layer)?;
            input = h.clone();
            states[l] = h;
        }
    }
    let h_last = states.last().expect("at least one layer");
    let mut pred = net.head_b;
    for (w, h) in net.head_w.iter().zip(h_last) {
        pred += w * h;
    }
    Ok(pred)
}

/// Predictions for a batch of windowed samples, in input order.
pub fn predict_batch(net: &GruNetwork, samples: &[WindowedSample]) -> Result<Vec<f64>> {
    let preds = exec::map_collect(samples, |s| forward_only(net, &s.x));
    preds.into_iter().collect()
}
