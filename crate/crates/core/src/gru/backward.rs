//! Exact backpropagation through time for the GRU stack.
//!
//! Each sample's gradient is computed in its own accumulator, then the
//! per-sample gradients are summed in index order within fixed-size chunks
//! and the chunks reduced in order. Summation order is therefore a
//! constant of the batch, independent of the execution backend, so the
//! parallel and sequential builds produce bit-identical gradients. It also
//! makes the batch gradient an exact ordered floating-point sum of the
//! per-sample gradients, which the batching tests rely on.

use super::forward::{forward, ForwardCache};
use super::train::LossConfig;
use super::{GruLayerParams, GruNetwork};
use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::exec;

/// Number of samples accumulated sequentially before the ordered chunk
/// reduction. Fixed, so thread count never changes summation order.
const CHUNK: usize = 32;

/// Gradient of the loss with respect to every network parameter, stored in
/// the same shapes as the network itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<GruLayerParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl Gradients {
    pub fn zeros_like(net: &GruNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| GruLayerParams::zeros(l.hidden_size(), l.input_size()))
                .collect(),
            head_w: vec![0.0; net.head_w.len()],
            head_b: 0.0,
        }
    }

    fn zero(&mut self) {
        for layer in &mut self.layers {
            for m in [
                &mut layer.w_z,
                &mut layer.u_z,
                &mut layer.w_r,
                &mut layer.u_r,
                &mut layer.w_h,
                &mut layer.u_h,
            ] {
                m.data.fill(0.0);
            }
            layer.b_z.fill(0.0);
            layer.b_r.fill(0.0);
            layer.b_h.fill(0.0);
        }
        self.head_w.fill(0.0);
        self.head_b = 0.0;
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ma, mb) in [
                (&mut a.w_z, &b.w_z),
                (&mut a.u_z, &b.u_z),
                (&mut a.w_r, &b.w_r),
                (&mut a.u_r, &b.u_r),
                (&mut a.w_h, &b.w_h),
                (&mut a.u_h, &b.u_h),
            ] {
                for (x, y) in ma.data.iter_mut().zip(&mb.data) {
                    *x += y;
                }
            }
            for (va, vb) in [
                (&mut a.b_z, &b.b_z),
                (&mut a.b_r, &b.b_r),
                (&mut a.b_h, &b.b_h),
            ] {
                for (x, y) in va.iter_mut().zip(vb) {
                    *x += y;
                }
            }
        }
        for (x, y) in self.head_w.iter_mut().zip(&other.head_w) {
            *x += y;
        }
        self.head_b += other.head_b;
    }

    /// Same canonical ordering as [`GruNetwork::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for m in [&layer.w_z, &layer.u_z] {
                out.extend_from_slice(&m.data);
            }
            out.extend_from_slice(&layer.b_z);
            for m in [&layer.w_r, &layer.u_r] {
                out.extend_from_slice(&m.data);
            }
            out.extend_from_slice(&layer.b_r);
            for m in [&layer.w_h, &layer.u_h] {
                out.extend_from_slice(&m.data);
            }
            out.extend_from_slice(&layer.b_h);
        }
        out.extend_from_slice(&self.head_w);
        out.push(self.head_b);
        out
    }

    /// Euclidean norm over every coordinate, biases included.
    pub fn global_norm(&self) -> f64 {
        let mut sum = 0.0;
        for v in self.flatten() {
            sum += v * v;
        }
        sum.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for m in [
                &mut layer.w_z,
                &mut layer.u_z,
                &mut layer.w_r,
                &mut layer.u_r,
                &mut layer.w_h,
                &mut layer.u_h,
            ] {
                for v in &mut m.data {
                    *v *= factor;
                }
            }
            for b in [&mut layer.b_z, &mut layer.b_r, &mut layer.b_h] {
                for v in b.iter_mut() {
                    *v *= factor;
                }
            }
        }
        for v in &mut self.head_w {
            *v *= factor;
        }
        self.head_b *= factor;
    }
}

/// Backward pass through one cell step. `dh` is the loss gradient with
/// respect to `h_t`; returns the gradient with respect to `h_{t-1}` and,
/// unless `want_dx` is false, with respect to `x_t`.
#[allow(clippy::too_many_arguments)]
fn cell_backward(
    p: &GruLayerParams,
    g: &mut GruLayerParams,
    x: &[f64],
    h_prev: &[f64],
    z: &[f64],
    r: &[f64],
    hcand: &[f64],
    dh: &[f64],
    want_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>) {
    let hidden = p.hidden_size();
    // The reset gate saw u = U_h h_prev during forward; recompute it.
    let mut u = vec![0.0; hidden];
    p.u_h.matvec_add(h_prev, &mut u);

    let mut da_z = vec![0.0; hidden];
    let mut da_r = vec![0.0; hidden];
    let mut da_c = vec![0.0; hidden];
    let mut da_c_r = vec![0.0; hidden];
    let mut dh_prev = vec![0.0; hidden];
    for i in 0..hidden {
        // h = z*h_prev + (1-z)*hcand
        let dz = dh[i] * (h_prev[i] - hcand[i]);
        let dc = dh[i] * (1.0 - z[i]);
        da_c[i] = dc * (1.0 - hcand[i] * hcand[i]);
        let dr = da_c[i] * u[i];
        da_z[i] = dz * z[i] * (1.0 - z[i]);
        da_r[i] = dr * r[i] * (1.0 - r[i]);
        da_c_r[i] = da_c[i] * r[i];
        dh_prev[i] = dh[i] * z[i];
    }

    g.w_h.outer_add(&da_c, x);
    g.u_h.outer_add(&da_c_r, h_prev);
    for (b, d) in g.b_h.iter_mut().zip(&da_c) {
        *b += d;
    }
    g.w_z.outer_add(&da_z, x);
    g.u_z.outer_add(&da_z, h_prev);
    for (b, d) in g.b_z.iter_mut().zip(&da_z) {
        *b += d;
    }
    g.w_r.outer_add(&da_r, x);
    g.u_r.outer_add(&da_r, h_prev);
    for (b, d) in g.b_r.iter_mut().zip(&da_r) {
        *b += d;
    }

    p.u_h.matvec_t_add(&da_c_r, &mut dh_prev);
    p.u_z.matvec_t_add(&da_z, &mut dh_prev);
    p.u_r.matvec_t_add(&da_r, &mut dh_prev);

    let dx = if want_dx {
        let mut dx = vec![0.0; p.input_size()];
        p.w_h.matvec_t_add(&da_c, &mut dx);
        p.w_z.matvec_t_add(&da_z, &mut dx);
        p.w_r.matvec_t_add(&da_r, &mut dx);
        Some(dx)
    } else {
        None
    };
    (dx, dh_prev)
}

/// Accumulates one sample's contribution to the batch gradient.
/// `coef` is d(loss)/d(prediction) for this sample, batch averaging
/// already applied: (prediction - target) / batch_size.
fn sample_grad_into(
    net: &GruNetwork,
    window: &[f64],
    cache: &ForwardCache,
    coef: f64,
    acc: &mut Gradients,
) {
    let n_layers = net.layers.len();
    let steps = window.len();
    let top = &cache.layers[n_layers - 1];
    let h_last = top.h.last().expect("non-empty trace");

    for (gw, h) in acc.head_w.iter_mut().zip(h_last) {
        *gw += coef * h;
    }
    acc.head_b += coef;

    // carry[l] holds d(loss)/d(h_l at the step about to be processed).
    let mut carry: Vec<Vec<f64>> = net.hidden_sizes.iter().map(|&h| vec![0.0; h]).collect();
    for (c, w) in carry[n_layers - 1].iter_mut().zip(&net.head_w) {
        *c = coef * w;
    }

    let scalar_inputs: Vec<Vec<f64>> = window.iter().map(|&x| vec![x]).collect();
    for t in (0..steps).rev() {
        let mut from_above: Option<Vec<f64>> = None;
        for l in (0..n_layers).rev() {
            let mut dh = std::mem::take(&mut carry[l]);
            if let Some(dx) = from_above.take() {
                for (a, b) in dh.iter_mut().zip(&dx) {
                    *a += b;
                }
            }
            let x: &[f64] = if l == 0 {
                &scalar_inputs[t]
            } else {
                &cache.layers[l - 1].h[t + 1]
            };
            let trace = &cache.layers[l];
            let step = &trace.steps[t];
            let (dx, dh_prev) = cell_backward(
                &net.layers[l],
                &mut acc.layers[l],
                x,
                &trace.h[t],
                &step.z,
                &step.r,
                &step.hcand,
                &dh,
                l > 0,
            );
            carry[l] = dh_prev;
            from_above = dx;
        }
    }
}

fn add_regularizer(net: &GruNetwork, lambda: f64, acc: &mut Gradients) {
    if lambda == 0.0 {
        return;
    }
    for (g, p) in acc.layers.iter_mut().zip(&net.layers) {
        for (gm, pm) in [
            (&mut g.w_z, &p.w_z),
            (&mut g.u_z, &p.u_z),
            (&mut g.w_r, &p.w_r),
            (&mut g.u_r, &p.u_r),
            (&mut g.w_h, &p.w_h),
            (&mut g.u_h, &p.u_h),
        ] {
            for (gv, pv) in gm.data.iter_mut().zip(&pm.data) {
                *gv += lambda * pv;
            }
        }
    }
    for (gv, pv) in acc.head_w.iter_mut().zip(&net.head_w) {
        *gv += lambda * pv;
    }
}

fn apply_clip(acc: &mut Gradients, clip_norm: Option<f64>) {
    if let Some(c) = clip_norm {
        let norm = acc.global_norm();
        if norm > c {
            acc.scale(c / norm);
        }
    }
}

fn reduce_chunks(net: &GruNetwork, chunks: Vec<Gradients>) -> Gradients {
    let mut total = Gradients::zeros_like(net);
    for chunk in &chunks {
        total.add_assign(chunk);
    }
    total
}

/// Gradient of the batch loss given forward results computed on the same
/// batch. `forwards[i]` must be the output of [`forward`] on `samples[i]`.
pub fn backward(
    samples: &[WindowedSample],
    forwards: &[(f64, ForwardCache)],
    net: &GruNetwork,
    cfg: &LossConfig,
) -> Result<Gradients> {
    if samples.is_empty() {
        return Err(Error::shape(
            "cannot take gradients of an empty batch".to_string(),
        ));
    }
    if samples.len() != forwards.len() {
        return Err(Error::shape(format!(
            "batch has {} samples but {} forward results",
            samples.len(),
            forwards.len()
        )));
    }
    let n = samples.len();
    let n_chunks = n.div_ceil(CHUNK);
    let chunks = exec::map_indices(n_chunks, |c| {
        let mut acc = Gradients::zeros_like(net);
        let mut scratch = Gradients::zeros_like(net);
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let coef = (forwards[i].0 - samples[i].y) / n as f64;
            scratch.zero();
            sample_grad_into(net, &samples[i].x, &forwards[i].1, coef, &mut scratch);
            acc.add_assign(&scratch);
        }
        acc
    });
    let mut total = reduce_chunks(net, chunks);
    add_regularizer(net, cfg.lambda, &mut total);
    apply_clip(&mut total, cfg.clip_norm);
    Ok(total)
}

/// Fused forward plus backward over a batch. Returns the gradient and the
/// batch loss (data term averaged over the batch, plus the regularizer).
pub fn batch_gradients(
    net: &GruNetwork,
    samples: &[WindowedSample],
    cfg: &LossConfig,
) -> Result<(Gradients, f64)> {
    if samples.is_empty() {
        return Err(Error::shape(
            "cannot take gradients of an empty batch".to_string(),
        ));
    }
    let n = samples.len();
    let n_chunks = n.div_ceil(CHUNK);
    let results = exec::map_indices(n_chunks, |c| -> Result<(Gradients, f64)> {
        let mut acc = Gradients::zeros_like(net);
        let mut scratch = Gradients::zeros_like(net);
        let mut loss_sum = 0.0;
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let (pred, cache) = forward(net, &samples[i].x)?;
            let err = pred - samples[i].y;
            loss_sum += 0.5 * err * err;
            scratch.zero();
            sample_grad_into(net, &samples[i].x, &cache, err / n as f64, &mut scratch);
            acc.add_assign(&scratch);
        }
        Ok((acc, loss_sum))
    });
    let mut chunks = Vec::with_capacity(n_chunks);
    let mut data_loss = 0.0;
    for res in results {
        let (acc, loss_sum) = res?;
        chunks.push(acc);
        data_loss += loss_sum;
    }
    let mut total = reduce_chunks(net, chunks);
    add_regularizer(net, cfg.lambda, &mut total);
    apply_clip(&mut total, cfg.clip_norm);
    let loss = data_loss / n as f64 + cfg.lambda * 0.5 * net.weight_sq_norm();
    Ok((total, loss))
}
