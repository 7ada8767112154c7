use clap::{Parser, Subcommand};
use fedflow_cli::{commands, config, exit_code};
use std::path::PathBuf;
use std::process::ExitCode;

/// Every configuration key, its domain and its default. Unknown keys are
/// rejected.
const CONFIG_KEYS: &str = "\
Configuration keys (file lines or --set KEY=VALUE):
  data.source            'synthetic' | 'csv:<path>'          [synthetic]
  data.preset            'uniform' | 'paired' | 'quad'       [uniform]
  data.stations          integer >= 1                        [20]
  data.days              integer >= 1                        [90]
  data.interval_minutes  positive divisor of 1440            [5]
  data.noise_std         real >= 0                           [8]
  data.gap_policy        'reject' | 'interpolate'            [reject]
  data.train_fraction    real in (0, 1)                      [0.6666666666666666]
  window.r               window length, integer >= 1         [12]
  window.s               forecast horizon, integer >= 1      [1]
  model.hidden           comma list of layer sizes (1..=3)   [50,50]
  model.lambda           L2 weight, real >= 0                [0]
  model.clip             gradient clip norm > 0 | 'none'     [5]
  fed.orgs               organizations C, integer >= 1       [20]
  fed.epochs             local epochs E, integer >= 1        [1]
  fed.batch              mini-batch size B, integer >= 1     [128]
  fed.alpha              learning rate, real > 0             [0.001]
  fed.rounds             global rounds T, integer >= 1       [100]
  fed.beta               participation fraction in (0, 1]    [1]
  fed.failure_prob       mid-round drop chance in [0, 1]     [0]
  fed.aggregation        'uniform' | 'weighted'              [uniform]
  fed.protocol           'joint' | 'fedavg'                  [joint]
  fed.partition          'station' | 'sample'                [station]
  cluster.enabled        'true' | 'false'                    [false]
  cluster.k              clusters K, integer >= 1            [4]
  cluster.kappa          per-cluster minimum members         [1]
  cluster.restarts       K-Means restarts, integer >= 1      [10]
  cluster.max_iters      K-Means iteration cap               [100]
  cluster.sweep          comma list of K values (0 = plain)  [empty]
  seed                   integer                             [42]
";

#[derive(Parser)]
#[command(
    name = "fedflow",
    about = "Federated GRU traffic-flow forecasting experiments",
    long_about = "Runs the forecasting pipelines (centralized, federated, clustered \
                  federated) from a line-based `section.key = value` configuration. \
                  Every run writes a resolved config snapshot that reproduces its \
                  artifacts byte for byte.",
    after_long_help = CONFIG_KEYS
)]
struct Cli {
    /// Configuration file; defaults apply for every key it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a single key, e.g. --set fed.orgs=4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Shortcut for --set seed=N, applied after every other override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV plus manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one GRU on all pooled training data.
    TrainCentral {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train federated: per-organization local updates, cloud aggregation.
    TrainFed {
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster organizations, train one federation per cluster, select an
    /// ensemble. `cluster.sweep` runs several K values; K=0 means plain
    /// federated.
    TrainClustered {
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved checkpoint on the dataset's train or test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join the metrics of finished runs into one aligned table.
    Compare {
        /// Run directories (each must hold a metrics.tsv).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> fedflow_core::error::Result<()> {
    let cfg = config::resolve(cli.config.as_deref(), &cli.sets, cli.seed)?;
    match cli.command {
        Command::Synth { out } => commands::cmd_synth(&cfg, &out),
        Command::TrainCentral { out } => commands::cmd_train_central(&cfg, &out),
        Command::TrainFed { out } => commands::cmd_train_fed(&cfg, &out),
        Command::TrainClustered { out } => commands::cmd_train_clustered(&cfg, &out),
        Command::Evaluate {
            checkpoint,
            split,
            out,
        } => commands::cmd_evaluate(&cfg, &checkpoint, &split, &out),
        Command::Compare { dirs, out } => {
            let table = commands::cmd_compare(&dirs)?;
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(path, table)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
