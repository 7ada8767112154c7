//! Experiment configuration: a flat, line-based `section.key = value`
//! format chosen for diff-friendly snapshots. Every resolved run writes
//! its full configuration back out, and re-running from that snapshot
//! must reproduce the artifacts byte for byte.

use fedflow_core::data::{GapPolicy, PartitionMode};
use fedflow_core::error::{Error, Result};
use fedflow_core::fed::{AggregationMode, Protocol};
use std::fmt::Write as _;
use std::path::Path;

/// Where the experiment's dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Synthetic preset: `uniform`, `paired` or `quad`.
    pub preset: String,
    pub stations: usize,
    pub days: usize,
    pub interval_minutes: u32,
    pub noise_std: f64,
    pub gap_policy: GapPolicy,
    pub train_fraction: f64,
    pub window_r: usize,
    pub horizon_s: usize,
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub clip: Option<f64>,
    pub orgs: usize,
    pub epochs: usize,
    pub batch: usize,
    pub alpha: f64,
    pub rounds: u64,
    pub beta: f64,
    pub failure_prob: f64,
    pub aggregation: AggregationMode,
    pub protocol: Protocol,
    pub partition: PartitionMode,
    pub cluster_enabled: bool,
    pub cluster_k: usize,
    /// Uniform per-cluster minimum membership.
    pub cluster_kappa: usize,
    pub cluster_restarts: usize,
    pub cluster_max_iters: usize,
    /// K values for the clustered sweep table; 0 means plain federated.
    pub cluster_sweep: Vec<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            preset: "uniform".to_string(),
            stations: 20,
            days: 90,
            interval_minutes: 5,
            noise_std: 8.0,
            gap_policy: GapPolicy::Reject,
            train_fraction: 2.0 / 3.0,
            window_r: 12,
            horizon_s: 1,
            hidden: vec![50, 50],
            lambda: 0.0,
            clip: Some(5.0),
            orgs: 20,
            epochs: 1,
            batch: 128,
            alpha: 0.001,
            rounds: 100,
            beta: 1.0,
            failure_prob: 0.0,
            aggregation: AggregationMode::Uniform,
            protocol: Protocol::JointAnnouncement,
            partition: PartitionMode::ByStation,
            cluster_enabled: false,
            cluster_k: 4,
            cluster_kappa: 1,
            cluster_restarts: 10,
            cluster_max_iters: 100,
            cluster_sweep: Vec::new(),
            seed: 42,
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::config(format!("key '{key}': cannot read '{value}' as {want}"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|part| parse_usize(key, part.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Applies one `section.key = value` pair. Unknown keys are errors so
    /// that typos cannot silently fall back to defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data.source" => {
                self.source = match v {
                    "synthetic" => DataSource::Synthetic,
                    _ if v.starts_with("csv:") => DataSource::Csv(v["csv:".len()..].to_string()),
                    _ => return Err(bad(key, v, "'synthetic' or 'csv:<path>'")),
                };
            }
            "data.preset" => {
                if !matches!(v, "uniform" | "paired" | "quad") {
                    return Err(bad(key, v, "'uniform', 'paired' or 'quad'"));
                }
                self.preset = v.to_string();
            }
            "data.stations" => self.stations = parse_usize(key, v)?,
            "data.days" => self.days = parse_usize(key, v)?,
            "data.interval_minutes" => {
                self.interval_minutes = v.parse().map_err(|_| bad(key, v, "a positive integer"))?;
            }
            "data.noise_std" => self.noise_std = parse_f64(key, v)?,
            "data.gap_policy" => {
                self.gap_policy = match v {
                    "reject" => GapPolicy::Reject,
                    "interpolate" => GapPolicy::Interpolate,
                    _ => return Err(bad(key, v, "'reject' or 'interpolate'")),
                };
            }
            "data.train_fraction" => self.train_fraction = parse_f64(key, v)?,
            "window.r" => self.window_r = parse_usize(key, v)?,
            "window.s" => self.horizon_s = parse_usize(key, v)?,
            "model.hidden" => self.hidden = parse_usize_list(key, v)?,
            "model.lambda" => self.lambda = parse_f64(key, v)?,
            "model.clip" => {
                self.clip = if v == "none" {
                    None
                } else {
                    Some(parse_f64(key, v)?)
                };
            }
            "fed.orgs" => self.orgs = parse_usize(key, v)?,
            "fed.epochs" => self.epochs = parse_usize(key, v)?,
            "fed.batch" => self.batch = parse_usize(key, v)?,
            "fed.alpha" => self.alpha = parse_f64(key, v)?,
            "fed.rounds" => self.rounds = parse_u64(key, v)?,
            "fed.beta" => self.beta = parse_f64(key, v)?,
            "fed.failure_prob" => self.failure_prob = parse_f64(key, v)?,
            "fed.aggregation" => {
                self.aggregation = match v {
                    "uniform" => AggregationMode::Uniform,
                    "weighted" => AggregationMode::SampleWeighted,
                    _ => return Err(bad(key, v, "'uniform' or 'weighted'")),
                };
            }
            "fed.protocol" => {
                self.protocol = match v {
                    "joint" => Protocol::JointAnnouncement,
                    "fedavg" => Protocol::FedAvg,
                    _ => return Err(bad(key, v, "'joint' or 'fedavg'")),
                };
            }
            "fed.partition" => {
                self.partition = match v {
                    "station" => PartitionMode::ByStation,
                    "sample" => PartitionMode::BySample,
                    _ => return Err(bad(key, v, "'station' or 'sample'")),
                };
            }
            "cluster.enabled" => self.cluster_enabled = parse_bool(key, v)?,
            "cluster.k" => self.cluster_k = parse_usize(key, v)?,
            "cluster.kappa" => self.cluster_kappa = parse_usize(key, v)?,
            "cluster.restarts" => self.cluster_restarts = parse_usize(key, v)?,
            "cluster.max_iters" => self.cluster_max_iters = parse_usize(key, v)?,
            "cluster.sweep" => self.cluster_sweep = parse_usize_list(key, v)?,
            "seed" => self.seed = parse_u64(key, v)?,
            _ => return Err(Error::config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Parses a whole config file: `#` comments, blank lines, `key = value`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx as u64 + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{} (line {})", msg, idx + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Domain validation with the offending key path in every message.
    pub fn validate(&self) -> Result<()> {
        if let DataSource::Csv(path) = &self.source {
            if path.is_empty() {
                return Err(Error::config("key 'data.source': csv path is empty"));
            }
        }
        if self.stations == 0 {
            return Err(Error::config("key 'data.stations': must be at least 1"));
        }
        if self.days == 0 {
            return Err(Error::config("key 'data.days': must be at least 1"));
        }
        if self.interval_minutes == 0 || 1440 % self.interval_minutes != 0 {
            return Err(Error::config(
                "key 'data.interval_minutes': must be positive and divide 1440",
            ));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::config(
                "key 'data.noise_std': must be finite and >= 0",
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(
                "key 'data.train_fraction': must lie strictly between 0 and 1",
            ));
        }
        if self.window_r == 0 {
            return Err(Error::config("key 'window.r': must be at least 1"));
        }
        if self.horizon_s == 0 {
            return Err(Error::config("key 'window.s': must be at least 1"));
        }
        if self.hidden.is_empty() || self.hidden.len() > 3 {
            return Err(Error::config(
                "key 'model.hidden': needs 1 to 3 layer sizes",
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config(
                "key 'model.hidden': layer sizes must be >= 1",
            ));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::config("key 'model.lambda': must be finite and >= 0"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::config("key 'model.clip': must be > 0 or 'none'"));
            }
        }
        if self.orgs == 0 {
            return Err(Error::config("key 'fed.orgs': must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("key 'fed.epochs': must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("key 'fed.batch': must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("key 'fed.alpha': must be a positive number"));
        }
        if self.rounds == 0 {
            return Err(Error::config("key 'fed.rounds': must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config("key 'fed.beta': must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.failure_prob) {
            return Err(Error::config("key 'fed.failure_prob': must lie in [0, 1]"));
        }
        if self.cluster_enabled || !self.cluster_sweep.is_empty() {
            // A sweep replaces cluster.k entirely; only the values that
            // will actually run are held against the quota arithmetic.
            let effective: &[usize] = if self.cluster_sweep.is_empty() {
                std::slice::from_ref(&self.cluster_k)
            } else {
                &self.cluster_sweep
            };
            for &k in effective {
                if k > 0 && k * self.cluster_kappa > self.orgs {
                    return Err(Error::config(format!(
                        "key 'cluster.kappa': {k} clusters x minimum {} exceeds {} organizations",
                        self.cluster_kappa, self.orgs
                    )));
                }
            }
            if self.cluster_sweep.is_empty() && self.cluster_k == 0 {
                return Err(Error::config("key 'cluster.k': must be at least 1"));
            }
            if self.cluster_restarts == 0 {
                return Err(Error::config("key 'cluster.restarts': must be at least 1"));
            }
            if self.cluster_max_iters == 0 {
                return Err(Error::config("key 'cluster.max_iters': must be at least 1"));
            }
        }
        Ok(())
    }

    /// The full resolved configuration, ready to be parsed back by
    /// [`ExperimentConfig::apply_file`]. Floats use the shortest exact
    /// representation, so a snapshot reproduces the run bit for bit.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# fedflow experiment configuration (resolved)");
        let source = match &self.source {
            DataSource::Synthetic => "synthetic".to_string(),
            DataSource::Csv(path) => format!("csv:{path}"),
        };
        let _ = writeln!(out, "data.source = {source}");
        let _ = writeln!(out, "data.preset = {}", self.preset);
        let _ = writeln!(out, "data.stations = {}", self.stations);
        let _ = writeln!(out, "data.days = {}", self.days);
        let _ = writeln!(out, "data.interval_minutes = {}", self.interval_minutes);
        let _ = writeln!(out, "data.noise_std = {}", self.noise_std);
        let gap = match self.gap_policy {
            GapPolicy::Reject => "reject",
            GapPolicy::Interpolate => "interpolate",
        };
        let _ = writeln!(out, "data.gap_policy = {gap}");
        let _ = writeln!(out, "data.train_fraction = {}", self.train_fraction);
        let _ = writeln!(out, "window.r = {}", self.window_r);
        let _ = writeln!(out, "window.s = {}", self.horizon_s);
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "model.hidden = {}", hidden.join(","));
        let _ = writeln!(out, "model.lambda = {}", self.lambda);
        match self.clip {
            Some(c) => {
                let _ = writeln!(out, "model.clip = {c}");
            }
            None => {
                let _ = writeln!(out, "model.clip = none");
            }
        }
        let _ = writeln!(out, "fed.orgs = {}", self.orgs);
        let _ = writeln!(out, "fed.epochs = {}", self.epochs);
        let _ = writeln!(out, "fed.batch = {}", self.batch);
        let _ = writeln!(out, "fed.alpha = {}", self.alpha);
        let _ = writeln!(out, "fed.rounds = {}", self.rounds);
        let _ = writeln!(out, "fed.beta = {}", self.beta);
        let _ = writeln!(out, "fed.failure_prob = {}", self.failure_prob);
        let agg = match self.aggregation {
            AggregationMode::Uniform => "uniform",
            AggregationMode::SampleWeighted => "weighted",
        };
        let _ = writeln!(out, "fed.aggregation = {agg}");
        let proto = match self.protocol {
            Protocol::JointAnnouncement => "joint",
            Protocol::FedAvg => "fedavg",
        };
        let _ = writeln!(out, "fed.protocol = {proto}");
        let part = match self.partition {
            PartitionMode::ByStation => "station",
            PartitionMode::BySample => "sample",
        };
        let _ = writeln!(out, "fed.partition = {part}");
        let _ = writeln!(out, "cluster.enabled = {}", self.cluster_enabled);
        let _ = writeln!(out, "cluster.k = {}", self.cluster_k);
        let _ = writeln!(out, "cluster.kappa = {}", self.cluster_kappa);
        let _ = writeln!(out, "cluster.restarts = {}", self.cluster_restarts);
        let _ = writeln!(out, "cluster.max_iters = {}", self.cluster_max_iters);
        let sweep: Vec<String> = self.cluster_sweep.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(out, "cluster.sweep = {}", sweep.join(","));
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}

/// Resolves a config from an optional file, `--set` overrides and the
/// `--seed` shortcut, then validates.
pub fn resolve(
    file: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = file {
        cfg.apply_file(path)?;
    }
    for pair in sets {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects key=value, got '{pair}'")))?;
        cfg.set(key.trim(), value)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}
