//! Loss, SGD, and the local training loop shared by the centralized and
//! federated paths.

use super::backward::{batch_gradients, Gradients};
use super::forward::predict_batch;
use super::GruNetwork;
use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Loss hyperparameters: L2 penalty weight and optional global-norm
/// gradient clipping. Clipping defaults on; gradient verification disables
/// it so the analytic and numeric derivatives describe the same function.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub clip_norm: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            clip_norm: Some(5.0),
        }
    }
}

/// Batch loss: mean over samples of half the squared error, plus
/// `lambda/2` times the squared norm of the weights (biases exempt).
pub fn loss(preds: &[f64], targets: &[f64], net: &GruNetwork, cfg: &LossConfig) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} predictions against {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::shape(
            "loss of an empty batch is undefined".to_string(),
        ));
    }
    let mut data = 0.0;
    for (p, y) in preds.iter().zip(targets) {
        let e = p - y;
        data += 0.5 * e * e;
    }
    Ok(data / preds.len() as f64 + cfg.lambda * 0.5 * net.weight_sq_norm())
}

/// Evaluates the batch loss of a network on windowed samples.
pub fn batch_loss(net: &GruNetwork, samples: &[WindowedSample], cfg: &LossConfig) -> Result<f64> {
    let preds = predict_batch(net, samples)?;
    let targets: Vec<f64> = samples.iter().map(|s| s.y).collect();
    loss(&preds, &targets, net, cfg)
}

/// One SGD step: `p -= alpha * g` for every parameter.
pub fn sgd_step(net: &mut GruNetwork, grads: &Gradients, alpha: f64) {
    for (p, g) in net.layers.iter_mut().zip(&grads.layers) {
        for (pm, gm) in [
            (&mut p.w_z, &g.w_z),
            (&mut p.u_z, &g.u_z),
            (&mut p.w_r, &g.w_r),
            (&mut p.u_r, &g.u_r),
            (&mut p.w_h, &g.w_h),
            (&mut p.u_h, &g.u_h),
        ] {
            for (pv, gv) in pm.data.iter_mut().zip(&gm.data) {
                *pv -= alpha * gv;
            }
        }
        for (pb, gb) in [
            (&mut p.b_z, &g.b_z),
            (&mut p.b_r, &g.b_r),
            (&mut p.b_h, &g.b_h),
        ] {
            for (pv, gv) in pb.iter_mut().zip(gb) {
                *pv -= alpha * gv;
            }
        }
    }
    for (pv, gv) in net.head_w.iter_mut().zip(&grads.head_w) {
        *pv -= alpha * gv;
    }
    net.head_b -= alpha * grads.head_b;
}

/// Mini-batch SGD for `epochs` passes over `samples`: each epoch shuffles
/// sample order with a sub-seed derived from (`seed`, epoch index), then
/// walks contiguous batches of size `batch_size` (last one may be short).
/// Returns the trained network and the mean batch loss of each epoch.
pub fn local_update_with_trace(
    mut net: GruNetwork,
    samples: &[WindowedSample],
    epochs: usize,
    batch_size: usize,
    alpha: f64,
    cfg: &LossConfig,
    seed: u64,
) -> Result<(GruNetwork, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput(
            "local update received no samples".to_string(),
        ));
    }
    if epochs < 1 {
        return Err(Error::config("epochs must be at least 1"));
    }
    if batch_size < 1 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::config("learning rate must be finite and positive"));
    }

    let mut trace = Vec::with_capacity(epochs);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..epochs {
        let mut rng = rng::stream_rng(seed, Stream::EpochShuffle, &[epoch as u64]);
        rng::shuffle(&mut rng, &mut indices);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch_ids in indices.chunks(batch_size) {
            let batch: Vec<WindowedSample> =
                batch_ids.iter().map(|&i| samples[i].clone()).collect();
            let (grads, loss) = batch_gradients(&net, &batch, cfg)?;
            sgd_step(&mut net, &grads, alpha);
            epoch_loss += loss;
            batches += 1;
        }
        trace.push(epoch_loss / batches as f64);
    }
    Ok((net, trace))
}

/// [`local_update_with_trace`] without the loss trace.
pub fn local_update(
    net: GruNetwork,
    samples: &[WindowedSample],
    epochs: usize,
    batch_size: usize,
    alpha: f64,
    cfg: &LossConfig,
    seed: u64,
) -> Result<GruNetwork> {
    local_update_with_trace(net, samples, epochs, batch_size, alpha, cfg, seed).map(|(net, _)| net)
}
