//! The six subcommands: dataset synthesis, the three training pipelines,
//! checkpoint evaluation and run comparison.

use crate::artifacts::{
    ledger_summary, metrics_human, metrics_machine, parse_metrics_machine, rounds_csv, Stage,
};
use crate::config::ExperimentConfig;
use crate::pipeline;
use fedflow_core::cluster::{run_clustered_fedgru, ClusteredOutput};
use fedflow_core::data::{
    make_windows, metrics, write_csv, write_manifest, MetricsReport, Normalizer, WindowedSample,
    DEFAULT_MAPE_FLOOR,
};
use fedflow_core::error::{Error, Result};
use fedflow_core::fed::{run_centralized_training, run_federated_training};
use fedflow_core::gru::{
    init_network, load_checkpoint, predict_batch, save_checkpoint, Checkpoint, GruNetwork,
};
use std::fmt::Write as _;
use std::path::Path;

/// Test metrics in original flow units: predictions and targets are both
/// mapped back through the normalizer before scoring, so MAE/RMSE read as
/// vehicles per interval and MAPE's exclusion floor is meaningful.
fn test_report(
    net: &GruNetwork,
    samples: &[WindowedSample],
    norm: &Normalizer,
) -> Result<MetricsReport> {
    let preds = predict_batch(net, samples)?;
    score(&preds, samples, norm)
}

fn score(preds: &[f64], samples: &[WindowedSample], norm: &Normalizer) -> Result<MetricsReport> {
    let y: Vec<f64> = samples.iter().map(|s| norm.inverse(s.y)).collect();
    let yhat: Vec<f64> = preds.iter().map(|&p| norm.inverse(p)).collect();
    metrics(&y, &yhat, DEFAULT_MAPE_FLOOR)
}

pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dataset = pipeline::build_dataset(cfg)?;
    let stage = Stage::new(out)?;
    write_csv(&dataset, &stage.path("data.csv"))?;
    write_manifest(&dataset, &stage.path("manifest.txt"))?;
    stage.write("config.txt", &cfg.snapshot())?;
    let dir = stage.commit()?;
    println!(
        "wrote {} stations x {} points to {}",
        dataset.n_stations(),
        dataset.series_len(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_train_central(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let prep = pipeline::prepare(cfg)?;
    let fed_cfg = pipeline::federation_config(cfg);
    let init = init_network(1, &cfg.hidden, cfg.seed)?;
    let (output, losses) = run_centralized_training(
        &fed_cfg,
        &prep.train_samples,
        init,
        Some(&prep.test_samples),
    )?;
    let report = test_report(&output.net, &prep.test_samples, &prep.normalizer)?;

    let stage = Stage::new(out)?;
    stage.write("config.txt", &cfg.snapshot())?;
    stage.write(
        "metrics.txt",
        &metrics_human("centralized test metrics", &report),
    )?;
    stage.write(
        "metrics.tsv",
        &metrics_machine(&report, &prep.dataset.content_hash()),
    )?;
    stage.write("rounds.csv", &rounds_csv(&output.reports))?;
    let mut trace = String::from("round,train_loss\n");
    for (i, loss) in losses.iter().enumerate() {
        let _ = writeln!(trace, "{i},{loss}");
    }
    stage.write("loss_trace.csv", &trace)?;
    save_checkpoint(
        &stage.path("model.ckpt"),
        &Checkpoint {
            net: output.net,
            normalizer: prep.normalizer,
            window_r: cfg.window_r,
            horizon_s: cfg.horizon_s,
        },
    )?;
    let dir = stage.commit()?;
    print!("{}", metrics_human("centralized test metrics", &report));
    println!("artifacts in {}", dir.display());
    Ok(())
}

pub fn cmd_train_fed(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let prep = pipeline::prepare(cfg)?;
    let fed_cfg = pipeline::federation_config(cfg);
    let init = init_network(1, &cfg.hidden, cfg.seed)?;
    let output = run_federated_training(&fed_cfg, &prep.orgs, init, Some(&prep.test_samples))?;
    let report = test_report(&output.net, &prep.test_samples, &prep.normalizer)?;

    let stage = Stage::new(out)?;
    stage.write("config.txt", &cfg.snapshot())?;
    stage.write(
        "metrics.txt",
        &metrics_human("federated test metrics", &report),
    )?;
    stage.write(
        "metrics.tsv",
        &metrics_machine(&report, &prep.dataset.content_hash()),
    )?;
    stage.write("rounds.csv", &rounds_csv(&output.reports))?;
    stage.write("ledger.txt", &ledger_summary(&output.reports))?;
    save_checkpoint(
        &stage.path("model.ckpt"),
        &Checkpoint {
            net: output.net,
            normalizer: prep.normalizer,
            window_r: cfg.window_r,
            horizon_s: cfg.horizon_s,
        },
    )?;
    let dir = stage.commit()?;
    print!("{}", metrics_human("federated test metrics", &report));
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn clusters_csv(out: &ClusteredOutput) -> String {
    let mut text = String::from("org_id,lat,lon,cluster_id,in_selected\n");
    for rec in &out.per_org {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            rec.org_id, rec.lat, rec.lon, rec.cluster_id, rec.in_selected
        );
    }
    text
}

fn selection_report(out: &ClusteredOutput) -> String {
    let sel = &out.selection;
    let mut text = String::new();
    let cluster_of = |i: usize| out.models.models[i].cluster_id;
    let name = |subset: &[usize]| {
        subset
            .iter()
            .map(|&i| format!("c{}", cluster_of(i)))
            .collect::<Vec<_>>()
            .join("+")
    };
    let _ = writeln!(text, "models = {}", out.models.models.len());
    let _ = writeln!(
        text,
        "strategy = {}",
        if sel.greedy { "greedy" } else { "exhaustive" }
    );
    let _ = writeln!(text, "chosen = {}", name(&sel.chosen));
    let _ = writeln!(text, "validation_mae = {}", sel.validation_mae);
    // Full subset listing stays readable up to 2^6 - 1 rows; larger model
    // sets record only the ten best.
    let mut rows: Vec<(Vec<usize>, f64)> = sel.evaluated.clone();
    let full = out.models.models.len() <= 6;
    if !full {
        rows.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.len().cmp(&b.0.len())));
        rows.truncate(10);
        let _ = writeln!(text, "subsets = top 10 of {}", sel.evaluated.len());
    } else {
        let _ = writeln!(text, "subsets = all {}", sel.evaluated.len());
    }
    for (subset, mae) in &rows {
        let _ = writeln!(text, "  {} {}", name(subset), mae);
    }
    text
}

pub fn cmd_train_clustered(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let prep = pipeline::prepare(cfg)?;
    let fed_cfg = pipeline::federation_config(cfg);
    let init = init_network(1, &cfg.hidden, cfg.seed)?;
    let ks: Vec<usize> = if cfg.cluster_sweep.is_empty() {
        vec![cfg.cluster_k]
    } else {
        cfg.cluster_sweep.clone()
    };
    for &k in &ks {
        if k > prep.orgs.len() {
            return Err(Error::config(format!(
                "key 'cluster.k': {k} clusters but only {} organizations",
                prep.orgs.len()
            )));
        }
        if k * cfg.cluster_kappa > prep.orgs.len() {
            return Err(Error::config(format!(
                "key 'cluster.kappa': {k} clusters x minimum {} exceeds {} organizations",
                cfg.cluster_kappa,
                prep.orgs.len()
            )));
        }
    }

    let stage = Stage::new(out)?;
    stage.write("config.txt", &cfg.snapshot())?;

    let mut table_machine = String::from("k\tmae\tmse\trmse\tmape\n");
    let mut table_human = String::from("  K     MAE      MSE      RMSE     MAPE%\n");
    let mut last_report: Option<MetricsReport> = None;
    for &k in &ks {
        let report = if k == 0 {
            let output = run_federated_training(
                &fed_cfg,
                &prep.orgs,
                init.clone(),
                Some(&prep.test_samples),
            )?;
            stage.write("rounds_k0.csv", &rounds_csv(&output.reports))?;
            test_report(&output.net, &prep.test_samples, &prep.normalizer)?
        } else {
            let cluster_cfg = pipeline::cluster_config(cfg, k);
            let run = run_clustered_fedgru(
                &prep.orgs,
                &prep.test_samples,
                &cluster_cfg,
                &fed_cfg,
                init.clone(),
            )?;
            stage.write(&format!("clusters_k{k}.csv"), &clusters_csv(&run))?;
            stage.write(&format!("selection_k{k}.txt"), &selection_report(&run))?;
            if ks.len() == 1 {
                for training in &run.trainings {
                    let model = run
                        .models
                        .models
                        .iter()
                        .find(|m| m.cluster_id == training.cluster_id)
                        .expect("every training leaves a model");
                    save_checkpoint(
                        &stage.path(&format!("model_cluster{}.ckpt", training.cluster_id)),
                        &Checkpoint {
                            net: model.net.clone(),
                            normalizer: prep.normalizer,
                            window_r: cfg.window_r,
                            horizon_s: cfg.horizon_s,
                        },
                    )?;
                }
            }
            let preds = run.ensemble.predict(&prep.test_samples)?;
            score(&preds, &prep.test_samples, &prep.normalizer)?
        };
        let _ = writeln!(
            table_machine,
            "{k}\t{}\t{}\t{}\t{}",
            report.mae,
            report.mse,
            report.rmse,
            report.mape.map_or("none".to_string(), |m| m.to_string())
        );
        let _ = writeln!(
            table_human,
            "  {k:<5} {:<8.4} {:<8.4} {:<8.4} {}",
            report.mae,
            report.mse,
            report.rmse,
            report
                .mape
                .map_or("n/a".to_string(), |m| format!("{:.4}", m))
        );
        last_report = Some(report);
    }
    stage.write("table_by_k.tsv", &table_machine)?;
    stage.write("table_by_k.txt", &table_human)?;
    let report = last_report.expect("at least one K runs");
    stage.write(
        "metrics.tsv",
        &metrics_machine(&report, &prep.dataset.content_hash()),
    )?;
    stage.write(
        "metrics.txt",
        &metrics_human(
            &format!("clustered test metrics (K={})", ks[ks.len() - 1]),
            &report,
        ),
    )?;
    let dir = stage.commit()?;
    print!("{table_human}");
    println!("artifacts in {}", dir.display());
    Ok(())
}

pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    split: &str,
    out: &Path,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint).map_err(|e| match e {
        Error::Io(io) => Error::Checkpoint(format!("cannot read {}: {io}", checkpoint.display())),
        other => other,
    })?;
    let dataset = pipeline::build_dataset(cfg)?;
    let (train_ds, test_ds) = dataset.split_train_test(cfg.train_fraction)?;
    let part = match split {
        "train" => train_ds,
        "test" => test_ds,
        other => {
            return Err(Error::config(format!(
                "--split must be 'train' or 'test', got '{other}'"
            )))
        }
    };
    let windows = make_windows(&part, ckpt.window_r, ckpt.horizon_s, &ckpt.normalizer)?;
    let samples: Vec<WindowedSample> = windows.into_iter().flatten().collect();
    let report = test_report(&ckpt.net, &samples, &ckpt.normalizer)?;

    let stage = Stage::new(out)?;
    stage.write(
        "metrics.txt",
        &metrics_human(&format!("checkpoint metrics ({split} split)"), &report),
    )?;
    stage.write(
        "metrics.tsv",
        &metrics_machine(&report, &dataset.content_hash()),
    )?;
    let dir = stage.commit()?;
    print!(
        "{}",
        metrics_human(&format!("checkpoint metrics ({split} split)"), &report)
    );
    println!("artifacts in {}", dir.display());
    Ok(())
}

pub fn cmd_compare(dirs: &[std::path::PathBuf]) -> Result<String> {
    let mut rows = Vec::new();
    for dir in dirs {
        let path = dir.join("metrics.tsv");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Comparison(format!("cannot read {}: {e}", path.display())))?;
        let (report, hash) = parse_metrics_machine(&text)?;
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| dir.display().to_string());
        rows.push((label, report, hash));
    }
    let reference_hash = rows[0].2.clone();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>9} {:>9} {:>9} {:>8}  {}",
        "run", "MAE", "MSE", "RMSE", "MAPE%", "dataset"
    );
    for (label, report, hash) in &rows {
        let mape = report
            .mape
            .map_or("n/a".to_string(), |m| format!("{:.4}", m));
        let note = if *hash == reference_hash {
            "ok"
        } else {
            "MISMATCH"
        };
        let _ = writeln!(
            out,
            "{label:<24} {:>9.4} {:>9.4} {:>9.4} {mape:>8}  {note}",
            report.mae, report.mse, report.rmse
        );
    }
    Ok(out)
}
