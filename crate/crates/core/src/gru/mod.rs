//! From-scratch GRU regressor.
//!
//! The network maps a scalar input window onto a scalar prediction through
//! a stack of GRU layers and a linear head. All math is 64-bit and every
//! operation is a deterministic function of its inputs, which the gradient
//! and federation test suites rely on.
//!
//! Gate convention (kept exactly as stated, some references swap the roles
//! of `z` and `1 - z`):
//!
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! h'_t = tanh(W_h x_t + r_t .* (U_h h_{t-1}) + b_h)
//! h_t = z_t .* h_{t-1} + (1 - z_t) .* h'_t
//! ```

mod backward;
mod checkpoint;
mod forward;
mod train;

pub use backward::{backward, batch_gradients, Gradients};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{cell_forward, forward, predict_batch, CellStep, ForwardCache};
pub use train::{batch_loss, local_update, local_update_with_trace, loss, sgd_step, LossConfig};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out += A x`
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, acc) in out.iter_mut().enumerate() {
            let mut sum = 0.0;
            for (a, b) in self.row(i).iter().zip(x) {
                sum += a * b;
            }
            *acc += sum;
        }
    }

    /// `out += A^T x`
    pub fn matvec_t_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &xi) in x.iter().enumerate() {
            for (a, acc) in self.row(i).iter().zip(out.iter_mut()) {
                *acc += a * xi;
            }
        }
    }

    /// Rank-one update `A += a b^T`.
    pub fn outer_add(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (cell, &bj) in row.iter_mut().zip(b) {
                *cell += ai * bj;
            }
        }
    }
}

/// Parameters of one GRU layer: gate matrices against the input (`W_*`),
/// against the previous hidden state (`U_*`), and gate biases. The paper's
/// gate equations carry no biases; zero-initialised biases recover them.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_h: Matrix,
    pub u_h: Matrix,
    pub b_h: Vec<f64>,
}

impl GruLayerParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            w_r: Matrix::zeros(hidden, input),
            u_r: Matrix::zeros(hidden, hidden),
            b_r: vec![0.0; hidden],
            w_h: Matrix::zeros(hidden, input),
            u_h: Matrix::zeros(hidden, hidden),
            b_h: vec![0.0; hidden],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_z.len()
    }

    pub fn input_size(&self) -> usize {
        self.w_z.cols
    }
}

/// The full model: GRU layer stack plus a linear output head reading the
/// final hidden state of the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GruNetwork {
    pub layers: Vec<GruLayerParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub input_size: usize,
    pub hidden_sizes: Vec<usize>,
}

impl GruNetwork {
    /// All-zero network of the given geometry.
    pub fn zeros(input_size: usize, hidden_sizes: &[usize]) -> Result<Self> {
        check_geometry(input_size, hidden_sizes)?;
        let mut layers = Vec::with_capacity(hidden_sizes.len());
        let mut input = input_size;
        for &hidden in hidden_sizes {
            layers.push(GruLayerParams::zeros(hidden, input));
            input = hidden;
        }
        Ok(Self {
            layers,
            head_w: vec![0.0; *hidden_sizes.last().expect("non-empty")],
            head_b: 0.0,
            input_size,
            hidden_sizes: hidden_sizes.to_vec(),
        })
    }

    /// Total number of parameters, head included.
    pub fn param_count(&self) -> usize {
        param_count(self.input_size, &self.hidden_sizes)
    }

    /// Canonical flattening: per layer `W_z, U_z, b_z, W_r, U_r, b_r,
    /// W_h, U_h, b_h` (matrices row-major), then `head_w`, `head_b`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
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

    /// Inverse of [`GruNetwork::flatten`] for the given geometry.
    pub fn unflatten(params: &[f64], input_size: usize, hidden_sizes: &[usize]) -> Result<Self> {
        let expected = param_count(input_size, hidden_sizes);
        if params.len() != expected {
            return Err(Error::shape(format!(
                "parameter vector has {} entries, geometry needs {expected}",
                params.len()
            )));
        }
        let mut net = Self::zeros(input_size, hidden_sizes)?;
        let mut cursor = 0usize;
        let mut fill = |dst: &mut [f64]| {
            dst.copy_from_slice(&params[cursor..cursor + dst.len()]);
            cursor += dst.len();
        };
        for layer in &mut net.layers {
            fill(&mut layer.w_z.data);
            fill(&mut layer.u_z.data);
            fill(&mut layer.b_z);
            fill(&mut layer.w_r.data);
            fill(&mut layer.u_r.data);
            fill(&mut layer.b_r);
            fill(&mut layer.w_h.data);
            fill(&mut layer.u_h.data);
            fill(&mut layer.b_h);
        }
        fill(&mut net.head_w);
        drop(fill);
        net.head_b = params[cursor];
        debug_assert_eq!(cursor + 1, expected);
        Ok(net)
    }

    /// Sum of squares over weight matrices and the head weights; biases
    /// excluded (they are not regularized).
    pub fn weight_sq_norm(&self) -> f64 {
        let mut sum = 0.0;
        for layer in &self.layers {
            for m in [
                &layer.w_z, &layer.u_z, &layer.w_r, &layer.u_r, &layer.w_h, &layer.u_h,
            ] {
                for v in &m.data {
                    sum += v * v;
                }
            }
        }
        for v in &self.head_w {
            sum += v * v;
        }
        sum
    }
}

fn check_geometry(input_size: usize, hidden_sizes: &[usize]) -> Result<()> {
    if input_size < 1 {
        return Err(Error::config("input_size must be at least 1"));
    }
    if hidden_sizes.is_empty() || hidden_sizes.len() > 3 {
        return Err(Error::config(format!(
            "between 1 and 3 hidden layers are supported, got {}",
            hidden_sizes.len()
        )));
    }
    if hidden_sizes.iter().any(|&h| h < 1) {
        return Err(Error::config("hidden sizes must be at least 1"));
    }
    Ok(())
}

/// Parameter count for a geometry without building the network.
pub fn param_count(input_size: usize, hidden_sizes: &[usize]) -> usize {
    let mut total = 0;
    let mut input = input_size;
    for &hidden in hidden_sizes {
        total += 3 * (hidden * input + hidden * hidden + hidden);
        input = hidden;
    }
    total + hidden_sizes.last().copied().unwrap_or(0) + 1
}

/// Seeded Glorot-style initialization: each matrix uniform in `(-a, a)`
/// with `a = sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn init_network(input_size: usize, hidden_sizes: &[usize], seed: u64) -> Result<GruNetwork> {
    let mut net = GruNetwork::zeros(input_size, hidden_sizes)?;
    let mut rng = rng::stream_rng(seed, Stream::WeightInit, &[]);
    let mut fill = |m: &mut Matrix| {
        let a = (6.0 / (m.cols + m.rows) as f64).sqrt();
        for v in &mut m.data {
            *v = rng::uniform(&mut rng, -a, a);
        }
    };
    for layer in &mut net.layers {
        fill(&mut layer.w_z);
        fill(&mut layer.u_z);
        fill(&mut layer.w_r);
        fill(&mut layer.u_r);
        fill(&mut layer.w_h);
        fill(&mut layer.u_h);
    }
    let last = *hidden_sizes.last().expect("non-empty");
    let a = (6.0 / (last + 1) as f64).sqrt();
    for v in &mut net.head_w {
        *v = rng::uniform(&mut rng, -a, a);
    }
    Ok(net)
}
