//! Federated traffic-flow forecasting on time-series data.
//!
//! The crate is organised around four subsystems:
//!
//! * [`data`] — CSV ingestion, synthetic generation, windowing, normalization,
//!   station partitioning and the four accuracy metrics (MAE/MSE/RMSE/MAPE).
//! * [`gru`] — a from-scratch GRU regressor: forward pass, backpropagation
//!   through time, regularized squared-error loss and mini-batch SGD.
//! * [`fed`] — the simulated cloud: FedAVG rounds, the three-phase
//!   joint-announcement protocol with participant sub-sampling, failure
//!   injection and a byte-accurate communication ledger.
//! * [`cluster`] — constrained K-Means over organization locations with a
//!   min-cost-flow assignment step, per-cluster federated training and
//!   ensemble selection of the best global-model subset.
//!
//! Every entry point is a deterministic function of its inputs and an
//! explicit seed; repeated runs are bit-identical, with or without the
//! `parallel` feature.

pub mod cluster;
pub mod data;
pub mod error;
pub mod exec;
pub mod fed;
pub mod gru;
pub mod rng;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use error::{Error, Result};
