//! CSV ingestion and emission.
//!
//! Input schema: header `timestamp,station_id,flow[,lat,lon]`, ISO-8601
//! timestamps, one row per station per interval. Columns are located by
//! header name, so extra columns and reordered files load fine.

use super::{StationSeries, TimeSeriesDataset};
use crate::error::{Error, Result};
use chrono::{DateTime, NaiveDateTime, SecondsFormat, TimeZone, Utc};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// What to do with stations that miss interior intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapPolicy {
    /// Reject the file with a report naming every gapped station.
    #[default]
    Reject,
    /// Fill interior gaps by linear interpolation. Stations missing rows at
    /// the start or end of the common extent are still rejected.
    Interpolate,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub gap_policy: GapPolicy,
}

struct RawStation {
    id: String,
    location: Option<(f64, f64)>,
    points: Vec<(DateTime<Utc>, f64)>,
}

pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<TimeSeriesDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::schema(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::schema(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let ts_col = col("timestamp").ok_or_else(|| Error::schema("missing column: timestamp"))?;
    let id_col = col("station_id").ok_or_else(|| Error::schema("missing column: station_id"))?;
    let flow_col = col("flow").ok_or_else(|| Error::schema("missing column: flow"))?;
    let latlon_cols = match (col("lat"), col("lon")) {
        (Some(lat), Some(lon)) => Some((lat, lon)),
        (None, None) => None,
        _ => return Err(Error::schema("lat/lon columns must appear together")),
    };

    let mut stations: Vec<RawStation> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |msg: String| Error::Parse { line, msg };

        let ts_raw = record.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(ts_raw)
            .ok_or_else(|| parse_err(format!("bad timestamp {ts_raw:?}")))?;
        let id = record.get(id_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(parse_err("empty station_id".into()));
        }
        let flow_raw = record.get(flow_col).unwrap_or("");
        let flow: f64 = flow_raw
            .parse()
            .map_err(|_| parse_err(format!("bad flow value {flow_raw:?}")))?;
        if !flow.is_finite() || flow < 0.0 {
            return Err(parse_err(format!(
                "flow must be finite and >= 0, got {flow}"
            )));
        }
        let location = match latlon_cols {
            Some((lat_col, lon_col)) => {
                let lat: f64 = record
                    .get(lat_col)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| parse_err("bad lat value".into()))?;
                let lon: f64 = record
                    .get(lon_col)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| parse_err("bad lon value".into()))?;
                Some((lat, lon))
            }
            None => None,
        };

        let slot = *index.entry(id.clone()).or_insert_with(|| {
            stations.push(RawStation {
                id,
                location: None,
                points: Vec::new(),
            });
            stations.len() - 1
        });
        let station = &mut stations[slot];
        if station.location.is_none() {
            station.location = location;
        }
        station.points.push((timestamp, flow));
    }

    if stations.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    assemble(stations, opts)
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(Utc.from_utc_datetime(&naive));
        }
    }
    None
}

fn assemble(stations: Vec<RawStation>, opts: &LoadOptions) -> Result<TimeSeriesDataset> {
    // Timestamps must already be strictly increasing within each station.
    for s in &stations {
        for pair in s.points.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::schema(format!(
                    "non-monotone timestamps for station {} at {}",
                    s.id, pair[1].0
                )));
            }
        }
    }

    // The base interval is the smallest spacing seen anywhere; every other
    // spacing must be an exact multiple of it (a multiple > 1 is a gap).
    let mut interval_secs: Option<i64> = None;
    for s in &stations {
        for pair in s.points.windows(2) {
            let diff = (pair[1].0 - pair[0].0).num_seconds();
            interval_secs = Some(interval_secs.map_or(diff, |cur| cur.min(diff)));
        }
    }
    let interval_secs =
        interval_secs.ok_or_else(|| Error::schema("cannot infer interval from single rows"))?;
    if interval_secs <= 0 || interval_secs % 60 != 0 {
        return Err(Error::schema(format!(
            "inferred interval of {interval_secs}s is not a whole number of minutes"
        )));
    }

    let mut gap_notes: Vec<String> = Vec::new();
    let mut filled: Vec<RawStation> = Vec::new();
    for s in stations {
        let mut points: Vec<(DateTime<Utc>, f64)> = Vec::with_capacity(s.points.len());
        let mut interior_gaps = 0usize;
        for (i, &(t, v)) in s.points.iter().enumerate() {
            if i == 0 {
                points.push((t, v));
                continue;
            }
            let prev = *points.last().expect("non-empty");
            let diff = (t - prev.0).num_seconds();
            if diff % interval_secs != 0 {
                return Err(Error::schema(format!(
                    "station {} spacing of {diff}s at {t} is not a multiple of the {interval_secs}s interval",
                    s.id
                )));
            }
            let steps = diff / interval_secs;
            if steps > 1 {
                interior_gaps += (steps - 1) as usize;
                if opts.gap_policy == GapPolicy::Interpolate {
                    for k in 1..steps {
                        let frac = k as f64 / steps as f64;
                        let t_fill = prev.0 + chrono::Duration::seconds(interval_secs * k);
                        points.push((t_fill, prev.1 + (v - prev.1) * frac));
                    }
                }
            }
            points.push((t, v));
        }
        if interior_gaps > 0 && opts.gap_policy == GapPolicy::Reject {
            gap_notes.push(format!(
                "station {} missing {interior_gaps} interior row(s)",
                s.id
            ));
        }
        filled.push(RawStation { points, ..s });
    }
    if !gap_notes.is_empty() {
        return Err(Error::Gap(gap_notes.join("; ")));
    }

    // All stations must cover the same extent.
    let origin = filled
        .iter()
        .map(|s| s.points[0].0)
        .min()
        .expect("non-empty");
    let end = filled
        .iter()
        .map(|s| s.points.last().expect("non-empty").0)
        .max()
        .expect("non-empty");
    let expected_len = ((end - origin).num_seconds() / interval_secs) as usize + 1;
    let mut extent_notes: Vec<String> = Vec::new();
    for s in &filled {
        let offset = (s.points[0].0 - origin).num_seconds();
        if offset % interval_secs != 0 {
            return Err(Error::schema(format!(
                "station {} is not aligned to the common {interval_secs}s grid",
                s.id
            )));
        }
        if s.points.len() < expected_len {
            let missing = expected_len - s.points.len();
            extent_notes.push(format!(
                "station {} covers {} of {expected_len} rows (missing {missing})",
                s.id,
                s.points.len()
            ));
        }
    }
    if !extent_notes.is_empty() {
        return Err(Error::Gap(extent_notes.join("; ")));
    }

    let series = filled
        .into_iter()
        .map(|s| StationSeries {
            id: s.id,
            location: s.location.unwrap_or((0.0, 0.0)),
            values: s.points.into_iter().map(|(_, v)| v).collect(),
        })
        .collect();
    TimeSeriesDataset::new(series, (interval_secs / 60) as u32, origin)
}

/// Writes the dataset in the input schema (station-major row order).
pub fn write_csv(dataset: &TimeSeriesDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("timestamp,station_id,flow,lat,lon\n");
    let step = chrono::Duration::minutes(dataset.interval_minutes as i64);
    for station in &dataset.stations {
        let mut t = dataset.origin;
        for v in &station.values {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.to_rfc3339_opts(SecondsFormat::Secs, true),
                station.id,
                v,
                station.location.0,
                station.location.1
            );
            t += step;
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Companion manifest: station ids, locations, interval and length.
pub fn write_manifest(dataset: &TimeSeriesDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "stations={}", dataset.n_stations());
    let _ = writeln!(out, "interval_minutes={}", dataset.interval_minutes);
    let _ = writeln!(
        out,
        "origin={}",
        dataset.origin.to_rfc3339_opts(SecondsFormat::Secs, true)
    );
    let _ = writeln!(out, "length={}", dataset.series_len());
    for s in &dataset.stations {
        let _ = writeln!(
            out,
            "station={},lat={},lon={}",
            s.id, s.location.0, s.location.1
        );
    }
    atomic_write(path, out.as_bytes())
}

/// Writes via a temp file in the same directory, then renames into place,
/// so readers never observe a partially written artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
