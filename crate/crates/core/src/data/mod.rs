//! Traffic time-series handling: datasets, windowing, normalization,
//! partitioning into organizations, and accuracy metrics.

mod csv_io;
mod synthetic;

pub use csv_io::{atomic_write, load_csv, write_csv, write_manifest, GapPolicy, LoadOptions};
pub use synthetic::{generate_synthetic, Peak, ProfileGroup, SyntheticSpec};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

/// Default exclusion floor for MAPE denominators, in vehicles per interval.
pub const DEFAULT_MAPE_FLOOR: f64 = 1.0;

/// One detector station: identifier, geolocation and its flow series.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub id: String,
    /// (latitude, longitude) in degrees.
    pub location: (f64, f64),
    /// Vehicles per interval, finite and non-negative.
    pub values: Vec<f64>,
}

/// Per-station traffic counts on a shared, fixed-interval time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub stations: Vec<StationSeries>,
    pub interval_minutes: u32,
    pub origin: DateTime<Utc>,
}

impl TimeSeriesDataset {
    /// Validates the dataset invariants: equal station lengths, finite
    /// non-negative flows, coordinates in range.
    pub fn new(
        stations: Vec<StationSeries>,
        interval_minutes: u32,
        origin: DateTime<Utc>,
    ) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::EmptyInput("dataset has no stations".into()));
        }
        if interval_minutes == 0 {
            return Err(Error::schema("interval_minutes must be positive"));
        }
        let len = stations[0].values.len();
        for s in &stations {
            if s.values.len() != len {
                return Err(Error::schema(format!(
                    "station {} has length {} but expected {}",
                    s.id,
                    s.values.len(),
                    len
                )));
            }
            let (lat, lon) = s.location;
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::schema(format!(
                    "station {} location ({lat}, {lon}) out of range",
                    s.id
                )));
            }
            if let Some(v) = s.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::schema(format!(
                    "station {} contains invalid flow value {v}",
                    s.id
                )));
            }
        }
        Ok(Self {
            stations,
            interval_minutes,
            origin,
        })
    }

    pub fn series_len(&self) -> usize {
        self.stations[0].values.len()
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    /// Flow values of every station, concatenated in station order.
    pub fn all_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.stations.iter().flat_map(|s| s.values.iter().copied())
    }

    /// Temporal prefix split per station at `floor(len * fraction)`.
    /// No shuffling across time; train and test concatenate back to the
    /// original series.
    pub fn split_train_test(&self, train_fraction: f64) -> Result<(Self, Self)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train_fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let len = self.series_len();
        let boundary = (len as f64 * train_fraction).floor() as usize;
        if boundary == 0 || boundary == len {
            return Err(Error::config(format!(
                "split boundary {boundary} leaves an empty side for length {len}"
            )));
        }
        let take = |range: std::ops::Range<usize>, origin_shift: usize| {
            let stations = self
                .stations
                .iter()
                .map(|s| StationSeries {
                    id: s.id.clone(),
                    location: s.location,
                    values: s.values[range.clone()].to_vec(),
                })
                .collect();
            TimeSeriesDataset {
                stations,
                interval_minutes: self.interval_minutes,
                origin: self.origin
                    + chrono::Duration::minutes(self.interval_minutes as i64 * origin_shift as i64),
            }
        };
        Ok((take(0..boundary, 0), take(boundary..len, boundary)))
    }

    /// Stable content hash of the dataset (canonical text serialization).
    pub fn content_hash(&self) -> String {
        let mut text = String::new();
        let _ = writeln!(text, "interval={}", self.interval_minutes);
        let _ = writeln!(text, "origin={}", self.origin.to_rfc3339());
        for s in &self.stations {
            let _ = write!(text, "{},{},{}", s.id, s.location.0, s.location.1);
            for v in &s.values {
                let _ = write!(text, ",{v}");
            }
            text.push('\n');
        }
        let digest = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// One training sample: `r` normalized inputs and the normalized target
/// `s` steps past the window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub x: Vec<f64>,
    pub y: f64,
    /// Index of the source station within its dataset.
    pub station: u32,
    /// First time index after the window; the target sits at `t_index + s - 1`.
    pub t_index: u32,
}

/// Min-max scaler mapping the fitted range onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub min: f64,
    pub max: f64,
}

impl Normalizer {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(Error::Numeric(format!(
                "normalizer requires finite max > min, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    /// Fits on the given values (typically the training split only).
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for v in values {
            any = true;
            min = min.min(v);
            max = max.max(v);
        }
        if !any {
            return Err(Error::EmptyInput(
                "cannot fit normalizer on no values".into(),
            ));
        }
        Self::new(min, max)
    }

    pub fn transform(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

/// Slides length-`r` windows with horizon `s` over every station and
/// normalizes both inputs and targets. Returns one sample list per station,
/// index-aligned with `dataset.stations`.
pub fn make_windows(
    dataset: &TimeSeriesDataset,
    r: usize,
    s: usize,
    normalizer: &Normalizer,
) -> Result<Vec<Vec<WindowedSample>>> {
    if r < 1 || s < 1 {
        return Err(Error::config(format!(
            "window requires r >= 1, s >= 1 (got r={r}, s={s})"
        )));
    }
    let mut per_station = Vec::with_capacity(dataset.stations.len());
    for (idx, station) in dataset.stations.iter().enumerate() {
        let len = station.values.len();
        if len < r + s {
            return Err(Error::EmptyInput(format!(
                "station {} has {} points, too short for r={r}, s={s}",
                station.id, len
            )));
        }
        let count = len - r - s + 1;
        let mut samples = Vec::with_capacity(count);
        for j in 0..count {
            let x = station.values[j..j + r]
                .iter()
                .map(|&v| normalizer.transform(v))
                .collect();
            let y = normalizer.transform(station.values[j + r + s - 1]);
            samples.push(WindowedSample {
                x,
                y,
                station: idx as u32,
                t_index: (j + r) as u32,
            });
        }
        per_station.push(samples);
    }
    Ok(per_station)
}

/// How windowed samples are divided among organizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// Whole stations dealt round-robin; keeps each organization's samples
    /// spatially coherent for clustering.
    ByStation,
    /// Samples shuffled and dealt individually; ignores station identity.
    BySample,
}

/// One organization's share of the data.
#[derive(Debug, Clone)]
pub struct OrgShard {
    pub org_index: usize,
    /// Source stations, ascending dataset order.
    pub station_indices: Vec<u32>,
    /// Centroid of the source stations' coordinates.
    pub location: (f64, f64),
    pub samples: Vec<WindowedSample>,
}

/// Partitions windowed samples into `n_orgs` shards. Shard sizes differ by
/// at most one station (or one sample); the result is a true partition and
/// deterministic for a given seed.
pub fn partition_equal(
    dataset: &TimeSeriesDataset,
    windows: &[Vec<WindowedSample>],
    n_orgs: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Vec<OrgShard>> {
    if n_orgs < 1 {
        return Err(Error::config("n_orgs must be at least 1"));
    }
    if windows.len() != dataset.stations.len() {
        return Err(Error::shape(format!(
            "windows for {} stations but dataset has {}",
            windows.len(),
            dataset.stations.len()
        )));
    }
    match mode {
        PartitionMode::ByStation => {
            if n_orgs > dataset.stations.len() {
                return Err(Error::config(format!(
                    "station partition needs n_orgs <= {} stations, got {n_orgs}",
                    dataset.stations.len()
                )));
            }
            let mut shards: Vec<OrgShard> = (0..n_orgs)
                .map(|org_index| OrgShard {
                    org_index,
                    station_indices: Vec::new(),
                    location: (0.0, 0.0),
                    samples: Vec::new(),
                })
                .collect();
            for (i, station_windows) in windows.iter().enumerate() {
                let shard = &mut shards[i % n_orgs];
                shard.station_indices.push(i as u32);
                shard.samples.extend(station_windows.iter().cloned());
            }
            for shard in &mut shards {
                shard.location = centroid(dataset, &shard.station_indices);
            }
            Ok(shards)
        }
        PartitionMode::BySample => {
            let mut all: Vec<WindowedSample> =
                windows.iter().flat_map(|w| w.iter().cloned()).collect();
            if all.is_empty() {
                return Err(Error::EmptyInput("no samples to partition".into()));
            }
            let mut rng = rng::stream_rng(seed, Stream::PartitionShuffle, &[]);
            rng::shuffle(&mut rng, &mut all);
            let mut shards: Vec<OrgShard> = (0..n_orgs)
                .map(|org_index| OrgShard {
                    org_index,
                    station_indices: Vec::new(),
                    location: (0.0, 0.0),
                    samples: Vec::new(),
                })
                .collect();
            for (i, sample) in all.into_iter().enumerate() {
                shards[i % n_orgs].samples.push(sample);
            }
            for shard in &mut shards {
                let mut idx: Vec<u32> = shard.samples.iter().map(|s| s.station).collect();
                idx.sort_unstable();
                idx.dedup();
                shard.station_indices = idx;
                shard.location = centroid(dataset, &shard.station_indices);
            }
            Ok(shards)
        }
    }
}

fn centroid(dataset: &TimeSeriesDataset, station_indices: &[u32]) -> (f64, f64) {
    if station_indices.is_empty() {
        return (0.0, 0.0);
    }
    let mut lat = 0.0;
    let mut lon = 0.0;
    for &i in station_indices {
        let loc = dataset.stations[i as usize].location;
        lat += loc.0;
        lon += loc.1;
    }
    let n = station_indices.len() as f64;
    (lat / n, lon / n)
}

/// The four accuracy measures over denormalized predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Percent; `None` when every target sat below the MAPE floor.
    pub mape: Option<f64>,
    pub n: usize,
    /// Targets excluded from MAPE because `|y| <= mape_floor`.
    pub mape_excluded: usize,
}

/// MAE, MSE, RMSE and MAPE of `yhat` against `y` (vehicle counts).
/// Targets with `|y| <= mape_floor` are excluded from MAPE and counted in
/// `mape_excluded`; when nothing remains MAPE is reported as undefined.
pub fn metrics(y: &[f64], yhat: &[f64], mape_floor: f64) -> Result<MetricsReport> {
    if y.len() != yhat.len() {
        return Err(Error::shape(format!(
            "metrics length mismatch: {} observed vs {} predicted",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("metrics over empty vectors".into()));
    }
    let n = y.len();
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut ape_sum = 0.0;
    let mut ape_n = 0usize;
    for (&obs, &pred) in y.iter().zip(yhat) {
        let err = pred - obs;
        abs_sum += err.abs();
        sq_sum += err * err;
        if obs.abs() > mape_floor {
            ape_sum += (err / obs).abs();
            ape_n += 1;
        }
    }
    let mae = abs_sum / n as f64;
    let mse = sq_sum / n as f64;
    let report = MetricsReport {
        mae,
        mse,
        rmse: mse.sqrt(),
        mape: (ape_n > 0).then(|| 100.0 * ape_sum / ape_n as f64),
        n,
        mape_excluded: n - ape_n,
    };
    if !(report.mae.is_finite() && report.mse.is_finite()) {
        return Err(Error::Numeric("non-finite metric value".into()));
    }
    Ok(report)
}
