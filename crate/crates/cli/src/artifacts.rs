//! Artifact emission. A run stages every file in a temporary sibling of
//! the output directory and renames it into place at the end, so a failed
//! run never leaves a partially written artifact set behind.

use fedflow_core::data::MetricsReport;
use fedflow_core::error::{Error, Result};
use fedflow_core::fed::{CommLedger, RoundReport};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub struct Stage {
    final_dir: PathBuf,
    work_dir: PathBuf,
    committed: bool,
}

impl Stage {
    /// Refuses to clobber an existing non-empty directory; reruns should
    /// target fresh paths so earlier artifacts stay comparable.
    pub fn new(out: &Path) -> Result<Self> {
        if out.exists() && out.read_dir()?.next().is_some() {
            return Err(Error::config(format!(
                "output directory {} already exists and is not empty",
                out.display()
            )));
        }
        let name = out
            .file_name()
            .ok_or_else(|| Error::config("output path needs a directory name"))?;
        let work_dir = out.with_file_name(format!(
            ".{}.partial-{}",
            name.to_string_lossy(),
            std::process::id()
        ));
        if work_dir.exists() {
            std::fs::remove_dir_all(&work_dir)?;
        }
        std::fs::create_dir_all(&work_dir)?;
        Ok(Self {
            final_dir: out.to_path_buf(),
            work_dir,
            committed: false,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.path(name), contents)?;
        Ok(())
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.final_dir.exists() {
            // Only an empty directory can reach this point; replace it.
            std::fs::remove_dir(&self.final_dir)?;
        }
        std::fs::rename(&self.work_dir, &self.final_dir)?;
        self.committed = true;
        Ok(self.final_dir.clone())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.work_dir);
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "none".to_string(),
    }
}

fn fmt_opt_4(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "n/a".to_string(),
    }
}

/// Machine-readable metrics: full-precision TSV keyed by the dataset hash
/// so downstream comparisons can detect mismatched inputs. Contains no
/// run label, which keeps a later `evaluate` of the same checkpoint byte
/// identical to the training run's file.
pub fn metrics_machine(report: &MetricsReport, dataset_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mae\tmse\trmse\tmape\tn\tmape_excluded\tdataset_hash");
    let _ = writeln!(
        out,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        report.mae,
        report.mse,
        report.rmse,
        fmt_opt(report.mape),
        report.n,
        report.mape_excluded,
        dataset_hash
    );
    out
}

/// Parses a file produced by [`metrics_machine`].
pub fn parse_metrics_machine(text: &str) -> Result<(MetricsReport, String)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("mae\tmse\trmse") {
        return Err(Error::Comparison(format!(
            "unrecognized metrics header '{header}'"
        )));
    }
    let row = lines
        .next()
        .ok_or_else(|| Error::Comparison("metrics file has no data row".to_string()))?;
    let fields: Vec<&str> = row.split('\t').collect();
    if fields.len() != 7 {
        return Err(Error::Comparison(format!(
            "metrics row has {} fields, expected 7",
            fields.len()
        )));
    }
    let num = |i: usize| -> Result<f64> {
        fields[i]
            .parse()
            .map_err(|_| Error::Comparison(format!("bad number '{}' in metrics row", fields[i])))
    };
    let mape = if fields[3] == "none" {
        None
    } else {
        Some(num(3)?)
    };
    Ok((
        MetricsReport {
            mae: num(0)?,
            mse: num(1)?,
            rmse: num(2)?,
            mape,
            n: fields[4]
                .parse()
                .map_err(|_| Error::Comparison("bad sample count".to_string()))?,
            mape_excluded: fields[5]
                .parse()
                .map_err(|_| Error::Comparison("bad exclusion count".to_string()))?,
        },
        fields[6].to_string(),
    ))
}

/// Human-readable metrics table, 4 decimals.
pub fn metrics_human(label: &str, report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{label}");
    let _ = writeln!(out, "  MAE   {:.4}", report.mae);
    let _ = writeln!(out, "  MSE   {:.4}", report.mse);
    let _ = writeln!(out, "  RMSE  {:.4}", report.rmse);
    // `MetricsReport::mape` is already a percentage.
    let _ = writeln!(out, "  MAPE  {}", fmt_opt_4(report.mape));
    let _ = writeln!(
        out,
        "  n = {}, excluded from MAPE: {}",
        report.n, report.mape_excluded
    );
    out
}

fn join_ids(ids: &[u64]) -> String {
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Per-round CSV. Deliberately excludes wall-clock timings so reruns are
/// byte identical.
pub fn rounds_csv(reports: &[RoundReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "round,participants,dropped,global_mae,global_loss,bytes_up,bytes_down,cumulative_bytes"
    );
    let mut cumulative = 0u64;
    for r in reports {
        cumulative += r.bytes_up + r.bytes_down;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            join_ids(&r.participants),
            join_ids(&r.dropped),
            fmt_opt(r.global_mae),
            fmt_opt(r.global_loss),
            r.bytes_up,
            r.bytes_down,
            cumulative
        );
    }
    out
}

pub fn ledger_summary(reports: &[RoundReport]) -> String {
    let ledger = CommLedger::from_reports(reports);
    let mut out = String::new();
    let _ = writeln!(out, "rounds = {}", ledger.per_round.len());
    let _ = writeln!(out, "messages = {}", ledger.messages);
    let _ = writeln!(out, "bytes_up = {}", ledger.total_up);
    let _ = writeln!(out, "bytes_down = {}", ledger.total_down);
    let _ = writeln!(out, "bytes_total = {}", ledger.total_up + ledger.total_down);
    out
}
