//! Round protocols: check-in, participant selection, local training,
//! aggregation, and the training drivers built on them.
//!
//! Every stochastic event draws from its own stream keyed by round and org
//! id, so check-in failures, selection, mid-round drops and local training
//! never perturb each other's randomness. That independence is what makes
//! the protocol degeneracies (beta = 1, single client) exact rather than
//! approximate.

use super::{
    aggregate, params_bytes, secure_decode, secure_encode, FederationConfig, ModelUpdate,
    Organization, Protocol, RoundReport,
};
use crate::data::{metrics, WindowedSample, DEFAULT_MAPE_FLOOR};
use crate::error::{Error, Result};
use crate::exec;
use crate::gru::{local_update_with_trace, loss, predict_batch, GruNetwork};
use crate::rng::{self, Stream};

/// Phase 1: every live organization volunteers unless its per-round
/// failure draw strikes. Returns volunteer org ids in ascending order.
pub fn check_in(orgs: &[Organization], round: u64, seed: u64, failure_prob: f64) -> Vec<u64> {
    let mut volunteers: Vec<u64> = orgs
        .iter()
        .filter(|o| o.alive)
        .filter(|o| {
            if failure_prob == 0.0 {
                return true;
            }
            let mut rng = rng::stream_rng(seed, Stream::CheckIn, &[round, o.org_id]);
            rng::uniform01(&mut rng) >= failure_prob
        })
        .map(|o| o.org_id)
        .collect();
    volunteers.sort_unstable();
    volunteers
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Phase 2: draw `max(1, round_half_up(beta * |volunteers|))` participants
/// uniformly without replacement. Returns org ids in ascending order.
pub fn select_participants(
    volunteers: &[u64],
    beta: f64,
    seed: u64,
    round: u64,
) -> Result<Vec<u64>> {
    if volunteers.is_empty() {
        return Err(Error::EmptyInput(
            "no volunteers to select from".to_string(),
        ));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::config("beta must lie in (0, 1]"));
    }
    let k = round_half_up(beta * volunteers.len() as f64)
        .max(1)
        .min(volunteers.len());
    let mut rng = rng::stream_rng(seed, Stream::Select, &[round]);
    let mut chosen = rng::sample_without_replacement(&mut rng, volunteers.len(), k)
        .into_iter()
        .map(|i| volunteers[i])
        .collect::<Vec<u64>>();
    chosen.sort_unstable();
    Ok(chosen)
}

fn evaluate(
    net: &GruNetwork,
    eval: &[WindowedSample],
    cfg: &FederationConfig,
) -> Result<(f64, f64)> {
    let preds = predict_batch(net, eval)?;
    let targets: Vec<f64> = eval.iter().map(|s| s.y).collect();
    let report = metrics(&targets, &preds, DEFAULT_MAPE_FLOOR)?;
    let l = loss(&preds, &targets, net, &cfg.loss)?;
    Ok((report.mae, l))
}

/// One full round: check-in, selection and broadcast, parallel local
/// training with mid-round drop injection, secure upload, aggregation.
/// A round with no volunteers or no completed uploads leaves the global
/// model untouched and flags the report as stalled.
pub fn run_round(
    global: GruNetwork,
    orgs: &[Organization],
    cfg: &FederationConfig,
    round: u64,
    eval: Option<&[WindowedSample]>,
) -> Result<(GruNetwork, RoundReport)> {
    let start = std::time::Instant::now();
    let pb = params_bytes(global.param_count());

    let volunteers = check_in(orgs, round, cfg.seed, cfg.failure_prob);
    if volunteers.is_empty() {
        let (global_mae, global_loss) = match eval {
            Some(e) => {
                let (mae, l) = evaluate(&global, e, cfg)?;
                (Some(mae), Some(l))
            }
            None => (None, None),
        };
        return Ok((
            global,
            RoundReport {
                round,
                participants: Vec::new(),
                dropped: Vec::new(),
                global_mae,
                global_loss,
                bytes_up: 0,
                bytes_down: 0,
                stalled: true,
                wall_time: start.elapsed(),
            },
        ));
    }

    let participants = match cfg.protocol {
        Protocol::FedAvg => volunteers,
        Protocol::JointAnnouncement => select_participants(&volunteers, cfg.beta, cfg.seed, round)?,
    };
    let bytes_down = pb * participants.len() as u64;

    // Broadcast and local training. Participants are processed in
    // ascending org id; the result vector preserves that order.
    let outcomes = exec::map_collect(&participants, |&org_id| -> Result<Option<ModelUpdate>> {
        let org = orgs
            .iter()
            .find(|o| o.org_id == org_id)
            .expect("participant ids come from orgs");
        if org.samples.is_empty() {
            return Err(Error::EmptyInput(format!(
                "organization {org_id} has no local samples"
            )));
        }
        if cfg.failure_prob > 0.0 {
            let mut rng = rng::stream_rng(cfg.seed, Stream::MidRoundDrop, &[round, org_id]);
            if rng::uniform01(&mut rng) < cfg.failure_prob {
                return Ok(None);
            }
        }
        let local_seed = rng::derive_seed(cfg.seed, Stream::LocalTraining, &[round, org_id]);
        let (trained, _) = local_update_with_trace(
            global.clone(),
            &org.samples,
            cfg.epochs,
            cfg.batch,
            cfg.alpha,
            &cfg.loss,
            local_seed,
        )?;
        let envelope = secure_encode(&trained.flatten());
        let bytes = envelope.len() as u64;
        let params = secure_decode(&envelope)?;
        Ok(Some(ModelUpdate {
            org_id,
            round,
            params,
            n_samples: org.samples.len() as u64,
            bytes,
        }))
    });

    let mut completed = Vec::new();
    let mut dropped = Vec::new();
    for (org_id, outcome) in participants.iter().zip(outcomes) {
        match outcome? {
            Some(update) => completed.push(update),
            None => dropped.push(*org_id),
        }
    }
    let bytes_up: u64 = completed.iter().map(|u| u.bytes).sum();

    let (global, stalled) = if completed.is_empty() {
        (global, true)
    } else {
        let new_params = aggregate(&completed, cfg.aggregation_mode)?;
        (
            GruNetwork::unflatten(&new_params, global.input_size, &global.hidden_sizes)?,
            false,
        )
    };

    let (global_mae, global_loss) = match eval {
        Some(e) => {
            let (mae, l) = evaluate(&global, e, cfg)?;
            (Some(mae), Some(l))
        }
        None => (None, None),
    };

    Ok((
        global,
        RoundReport {
            round,
            participants,
            dropped,
            global_mae,
            global_loss,
            bytes_up,
            bytes_down,
            stalled,
            wall_time: start.elapsed(),
        },
    ))
}

/// Result of a training driver: the final model and per-round reports.
#[derive(Debug, Clone)]
pub struct TrainingOutput {
    pub net: GruNetwork,
    pub reports: Vec<RoundReport>,
}

/// Runs `cfg.rounds` federated rounds from `init_net`. When `eval` is
/// given, each report carries the global model's test MAE and loss.
pub fn run_federated_training(
    cfg: &FederationConfig,
    orgs: &[Organization],
    init_net: GruNetwork,
    eval: Option<&[WindowedSample]>,
) -> Result<TrainingOutput> {
    cfg.validate()?;
    if orgs.len() != cfg.n_orgs {
        return Err(Error::config(format!(
            "config declares {} organizations, {} supplied",
            cfg.n_orgs,
            orgs.len()
        )));
    }
    let mut ids: Vec<u64> = orgs.iter().map(|o| o.org_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != orgs.len() {
        return Err(Error::config("organization ids must be unique"));
    }

    let mut net = init_net;
    let mut reports = Vec::with_capacity(cfg.rounds as usize);
    for round in 0..cfg.rounds {
        let (next, report) = run_round(net, orgs, cfg, round, eval)?;
        net = next;
        reports.push(report);
    }
    Ok(TrainingOutput { net, reports })
}

/// Centralized baseline over the pooled dataset. Deliberately structured
/// as `cfg.rounds` iterations of the same local-update path the federated
/// driver uses, with the org-0 sub-seed, so a single-client federation
/// and this baseline walk identical parameter trajectories.
pub fn run_centralized_training(
    cfg: &FederationConfig,
    all_samples: &[WindowedSample],
    init_net: GruNetwork,
    eval: Option<&[WindowedSample]>,
) -> Result<(TrainingOutput, Vec<f64>)> {
    cfg.validate()?;
    if all_samples.is_empty() {
        return Err(Error::EmptyInput(
            "centralized training needs samples".to_string(),
        ));
    }
    let pb = params_bytes(crate::gru::param_count(
        init_net.input_size,
        &init_net.hidden_sizes,
    ));
    let mut net = init_net;
    let mut reports = Vec::with_capacity(cfg.rounds as usize);
    let mut trace = Vec::with_capacity(cfg.rounds as usize * cfg.epochs);
    for round in 0..cfg.rounds {
        let start = std::time::Instant::now();
        let local_seed = rng::derive_seed(cfg.seed, Stream::LocalTraining, &[round, 0]);
        let (next, epoch_losses) = local_update_with_trace(
            net,
            all_samples,
            cfg.epochs,
            cfg.batch,
            cfg.alpha,
            &cfg.loss,
            local_seed,
        )?;
        net = next;
        trace.extend_from_slice(&epoch_losses);
        let (global_mae, global_loss) = match eval {
            Some(e) => {
                let (mae, l) = evaluate(&net, e, cfg)?;
                (Some(mae), Some(l))
            }
            None => (None, None),
        };
        reports.push(RoundReport {
            round,
            participants: vec![0],
            dropped: Vec::new(),
            global_mae,
            global_loss,
            // The baseline moves no bytes; columns stay comparable.
            bytes_up: 0,
            bytes_down: 0,
            stalled: false,
            wall_time: start.elapsed(),
        });
        let _ = pb;
    }
    Ok((TrainingOutput { net, reports }, trace))
}

/// Communication totals of a run against a reference run (typically the
/// same setup at beta = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadSummary {
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub reference_bytes_up: u64,
    pub reference_bytes_down: u64,
    pub mean_round_up: f64,
    pub mean_round_down: f64,
    pub uplink_reduction: f64,
    pub downlink_reduction: f64,
}

pub fn measure_overhead(
    cfg: &FederationConfig,
    reports: &[RoundReport],
    reference_cfg: &FederationConfig,
    reference: &[RoundReport],
) -> Result<OverheadSummary> {
    if reports.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput(
            "overhead comparison needs reports".to_string(),
        ));
    }
    if cfg.n_orgs != reference_cfg.n_orgs
        || cfg.rounds != reference_cfg.rounds
        || reports.len() != reference.len()
    {
        return Err(Error::Comparison(format!(
            "runs are not comparable: {} orgs / {} rounds vs {} orgs / {} rounds",
            cfg.n_orgs,
            reports.len(),
            reference_cfg.n_orgs,
            reference.len()
        )));
    }
    let sum = |rs: &[RoundReport]| -> (u64, u64) {
        rs.iter()
            .fold((0u64, 0u64), |(u, d), r| (u + r.bytes_up, d + r.bytes_down))
    };
    let (up, down) = sum(reports);
    let (ref_up, ref_down) = sum(reference);
    if ref_up == 0 || ref_down == 0 {
        return Err(Error::Comparison(
            "reference run moved no bytes; reduction undefined".to_string(),
        ));
    }
    Ok(OverheadSummary {
        bytes_up: up,
        bytes_down: down,
        reference_bytes_up: ref_up,
        reference_bytes_down: ref_down,
        mean_round_up: up as f64 / reports.len() as f64,
        mean_round_down: down as f64 / reports.len() as f64,
        uplink_reduction: 1.0 - up as f64 / ref_up as f64,
        downlink_reduction: 1.0 - down as f64 / ref_down as f64,
    })
}
