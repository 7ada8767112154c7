//! The simulated cloud: organizations, model updates, aggregation and the
//! communication ledger.
//!
//! Aggregation is anchored on the first update: the result is computed as
//! `anchor + sum_k w_k * (v_k - anchor)` over updates sorted by org id.
//! Identical updates therefore aggregate to themselves exactly, a single
//! update passes through bit-for-bit, and sample weighting with equal
//! counts reproduces the uniform mean bit-for-bit. A plain weighted sum
//! would only achieve any of that to rounding error.

mod protocol;

pub use protocol::{
    check_in, measure_overhead, run_centralized_training, run_federated_training, run_round,
    select_participants, OverheadSummary, TrainingOutput,
};

use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::gru::LossConfig;

/// Serialized size of an update or broadcast carrying `param_count`
/// parameters: 8 bytes per value plus the fixed envelope header.
pub const ENVELOPE_HEADER_BYTES: usize = 64;

pub fn params_bytes(param_count: usize) -> u64 {
    (8 * param_count + ENVELOPE_HEADER_BYTES) as u64
}

/// One participating organization with its local windowed dataset.
#[derive(Debug, Clone)]
pub struct Organization {
    pub org_id: u64,
    pub samples: Vec<WindowedSample>,
    pub location: (f64, f64),
    pub alive: bool,
}

/// A trained parameter vector returned by an organization after a round.
#[derive(Debug, Clone)]
pub struct ModelUpdate {
    pub org_id: u64,
    pub round: u64,
    pub params: Vec<f64>,
    pub n_samples: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    Uniform,
    SampleWeighted,
}

/// Which round protocol the cloud runs. `FedAvg` trains every volunteer;
/// `JointAnnouncement` adds the sub-sampling phase controlled by `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    FedAvg,
    JointAnnouncement,
}

#[derive(Debug, Clone)]
pub struct FederationConfig {
    pub n_orgs: usize,
    pub epochs: usize,
    pub batch: usize,
    pub alpha: f64,
    pub rounds: u64,
    pub beta: f64,
    pub failure_prob: f64,
    pub aggregation_mode: AggregationMode,
    pub protocol: Protocol,
    pub loss: LossConfig,
    pub seed: u64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_orgs < 1 {
            return Err(Error::config("n_orgs must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch < 1 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha must be finite and positive"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("beta must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.failure_prob) {
            return Err(Error::config("failure_prob must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// What the cloud records about one round.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u64,
    pub participants: Vec<u64>,
    pub dropped: Vec<u64>,
    pub global_mae: Option<f64>,
    pub global_loss: Option<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub stalled: bool,
    pub wall_time: std::time::Duration,
}

/// Cumulative communication accounting across a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub per_round: Vec<(u64, u64)>,
    pub total_up: u64,
    pub total_down: u64,
    pub messages: u64,
}

impl CommLedger {
    pub fn from_reports(reports: &[RoundReport]) -> Self {
        let mut ledger = Self::default();
        for r in reports {
            ledger.per_round.push((r.bytes_up, r.bytes_down));
            ledger.total_up += r.bytes_up;
            ledger.total_down += r.bytes_down;
            // One downlink message per participant, one uplink message per
            // completed upload.
            let completed = r.participants.len() - r.dropped.len();
            ledger.messages += (r.participants.len() + completed) as u64;
        }
        ledger
    }
}

/// Opaque envelope standing in for secure parameter aggregation. The
/// transform is the identity today; the boundary exists so that swapping
/// in real encryption changes no other interface, and so message sizes in
/// the ledger come from actual serialized bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureEnvelope {
    bytes: Vec<u8>,
}

impl SecureEnvelope {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

pub fn secure_encode(params: &[f64]) -> SecureEnvelope {
    let mut bytes = Vec::with_capacity(ENVELOPE_HEADER_BYTES + 8 * params.len());
    let mut header = [0u8; ENVELOPE_HEADER_BYTES];
    let magic = b"fedflow-envelope-v1";
    header[..magic.len()].copy_from_slice(magic);
    header[32..40].copy_from_slice(&(params.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    SecureEnvelope { bytes }
}

pub fn secure_decode(envelope: &SecureEnvelope) -> Result<Vec<f64>> {
    let bytes = &envelope.bytes;
    if bytes.len() < ENVELOPE_HEADER_BYTES || !bytes.starts_with(b"fedflow-envelope-v1") {
        return Err(Error::schema("malformed parameter envelope"));
    }
    let count = u64::from_le_bytes(bytes[32..40].try_into().expect("fixed slice")) as usize;
    let body = &bytes[ENVELOPE_HEADER_BYTES..];
    if body.len() != 8 * count {
        return Err(Error::schema(format!(
            "envelope promises {count} parameters, body holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact")))
        .collect())
}

/// Combines completed updates into the next global parameter vector.
/// Updates are processed in ascending org id regardless of arrival order.
pub fn aggregate(updates: &[ModelUpdate], mode: AggregationMode) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::EmptyInput(
            "aggregation needs at least one completed update".to_string(),
        ));
    }
    let dim = updates[0].params.len();
    for u in updates {
        if u.params.len() != dim {
            return Err(Error::shape(format!(
                "update from org {} has {} parameters, expected {dim}",
                u.org_id,
                u.params.len()
            )));
        }
        if u.n_samples < 1 {
            return Err(Error::schema(format!(
                "update from org {} reports zero samples",
                u.org_id
            )));
        }
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].org_id);

    let total_samples: u64 = updates.iter().map(|u| u.n_samples).sum();
    let k = updates.len() as f64;
    let anchor = &updates[order[0]].params;
    let mut result = anchor.clone();
    for &i in &order {
        let u = &updates[i];
        let w = match mode {
            AggregationMode::Uniform => 1.0 / k,
            AggregationMode::SampleWeighted => u.n_samples as f64 / total_samples as f64,
        };
        for (r, (v, a)) in result.iter_mut().zip(u.params.iter().zip(anchor)) {
            *r += w * (v - a);
        }
    }
    Ok(result)
}
