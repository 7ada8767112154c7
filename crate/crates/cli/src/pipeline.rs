//! Wiring from a resolved configuration to datasets, windows and the
//! federated organizations every training command operates on.

use crate::config::{DataSource, ExperimentConfig};
use fedflow_core::cluster::ClusterConfig;
use fedflow_core::data::{
    generate_synthetic, load_csv, make_windows, partition_equal, LoadOptions, Normalizer,
    SyntheticSpec, TimeSeriesDataset, WindowedSample,
};
use fedflow_core::error::Result;
use fedflow_core::fed::{FederationConfig, Organization};
use fedflow_core::gru::LossConfig;
use std::path::Path;

pub fn synthetic_spec(cfg: &ExperimentConfig) -> Result<SyntheticSpec> {
    let mut spec =
        SyntheticSpec::preset(&cfg.preset, cfg.stations, cfg.days, cfg.noise_std, cfg.seed)?;
    spec.interval_minutes = cfg.interval_minutes;
    Ok(spec)
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<TimeSeriesDataset> {
    match &cfg.source {
        DataSource::Synthetic => generate_synthetic(&synthetic_spec(cfg)?),
        DataSource::Csv(path) => load_csv(
            Path::new(path),
            &LoadOptions {
                gap_policy: cfg.gap_policy,
            },
        ),
    }
}

/// Everything a training command needs, derived deterministically from the
/// configuration: the chronological train/test split, the normalizer
/// fitted on training values only, flattened sample sets and the
/// per-organization shards.
pub struct Prepared {
    pub dataset: TimeSeriesDataset,
    pub normalizer: Normalizer,
    pub train_samples: Vec<WindowedSample>,
    pub test_samples: Vec<WindowedSample>,
    pub orgs: Vec<Organization>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dataset = build_dataset(cfg)?;
    let (train_ds, test_ds) = dataset.split_train_test(cfg.train_fraction)?;
    let normalizer = Normalizer::fit(train_ds.all_values())?;
    let train_windows = make_windows(&train_ds, cfg.window_r, cfg.horizon_s, &normalizer)?;
    let test_windows = make_windows(&test_ds, cfg.window_r, cfg.horizon_s, &normalizer)?;

    let shards = partition_equal(&train_ds, &train_windows, cfg.orgs, cfg.partition, cfg.seed)?;
    let orgs: Vec<Organization> = shards
        .into_iter()
        .map(|shard| Organization {
            org_id: shard.org_index as u64,
            samples: shard.samples,
            location: shard.location,
            alive: true,
        })
        .collect();

    Ok(Prepared {
        dataset,
        normalizer,
        train_samples: train_windows.into_iter().flatten().collect(),
        test_samples: test_windows.into_iter().flatten().collect(),
        orgs,
    })
}

pub fn federation_config(cfg: &ExperimentConfig) -> FederationConfig {
    FederationConfig {
        n_orgs: cfg.orgs,
        epochs: cfg.epochs,
        batch: cfg.batch,
        alpha: cfg.alpha,
        rounds: cfg.rounds,
        beta: cfg.beta,
        failure_prob: cfg.failure_prob,
        aggregation_mode: cfg.aggregation,
        protocol: cfg.protocol,
        loss: LossConfig {
            lambda: cfg.lambda,
            clip_norm: cfg.clip,
        },
        seed: cfg.seed,
    }
}

pub fn cluster_config(cfg: &ExperimentConfig, k: usize) -> ClusterConfig {
    ClusterConfig {
        k,
        kappa: vec![cfg.cluster_kappa; k],
        max_iters: cfg.cluster_max_iters,
        restarts: cfg.cluster_restarts,
        seed: cfg.seed,
    }
}
