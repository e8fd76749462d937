use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

/// Audit video moment retrieval benchmarks for query-only bias.
///
/// Every option can also be given in the `--config` file as `key = value`, or
/// with `--set key=value`. Flags win over `--set`, which wins over the file.
/// Each run writes `manifest.conf` to the output directory; passing it back
/// as `--config` reruns the same command with the same effective settings.
#[derive(Parser, Debug)]
#[command(name = "moment-audit", version)]
struct Cli {
    /// Flat `key = value` config file (`#` starts a comment).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; required by every stochastic command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override a config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Data {
    /// Annotation format: canonical, charades or activitynet.
    #[arg(long)]
    dataset: Option<String>,
    /// Charades `video_id,duration_seconds` table.
    #[arg(long)]
    durations: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct Metric {
    /// Number of top-ranked predictions considered.
    #[arg(long)]
    k: Option<usize>,
    /// IoU threshold.
    #[arg(long)]
    m: Option<f64>,
    /// strict (IoU > m) or inclusive (IoU >= m).
    #[arg(long)]
    comparator: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Verb frequencies, coverage and location-prior density grids.
    AnalyzeBias {
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        train: Option<PathBuf>,
        /// Number of most frequent verbs that get their own density grid.
        #[arg(long)]
        top_verbs: Option<usize>,
        #[arg(long)]
        grid_resolution: Option<usize>,
    },
    /// Fit and score a blind baseline (prior-only, action-aware, uniform).
    RunBaseline {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        metric: Metric,
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Repetitions of the uniform baseline.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train the query-only Blind-TAN model (options as `blindtan.<name>`).
    TrainBlindtan {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        metric: Metric,
        #[arg(long)]
        train: Option<PathBuf>,
        /// Optional split to score the trained model on.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score predictions or annotators with a standard or multi-reference metric.
    Eval {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        metric_params: Metric,
        /// standard, nn, representative, human-representative, human-random,
        /// human-nn, human-rep-excluding-rep or human-rep-including-rep.
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Predictions JSONL.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Blind-TAN checkpoint to predict with instead of a predictions file.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Canonical file of multi-annotator reference sets.
        #[arg(long)]
        references: Option<PathBuf>,
        /// Comma-separated moment-length bucket edges in seconds.
        #[arg(long)]
        buckets: Option<String>,
    },
    /// Compare predictions on original and segment-shuffled features.
    ShuffleTest {
        #[command(flatten)]
        data: Data,
        #[command(flatten)]
        metric: Metric,
        /// prior-only, action-aware, uniform, blindtan, planted or external.
        #[arg(long)]
        predictor: Option<String>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Directory of per-video feature CSV files.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        segment_length: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Merge annotation-tool exports, or write a task manifest for the tool.
    ExportAnnotations {
        #[command(flatten)]
        data: Data,
        /// Comma-separated annotation export files.
        #[arg(long)]
        annotations: Option<String>,
        /// Corpus to turn into a task manifest.
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        annotators_per_sample: Option<usize>,
    },
}

fn put<T: ToString>(cfg: &mut RunConfig, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        cfg.set(key, v.to_string());
    }
}

fn put_path(cfg: &mut RunConfig, key: &str, value: &Option<PathBuf>) {
    put(cfg, key, &value.as_ref().map(|p| p.display()));
}

impl Data {
    fn apply(&self, cfg: &mut RunConfig) {
        put(cfg, "dataset", &self.dataset);
        put_path(cfg, "durations", &self.durations);
    }
}

impl Metric {
    fn apply(&self, cfg: &mut RunConfig) {
        put(cfg, "k", &self.k);
        put(cfg, "m", &self.m);
        put(cfg, "comparator", &self.comparator);
    }
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    put(&mut cfg, "seed", &cli.seed);
    put_path(&mut cfg, "out", &cli.out);
    let cfg = &mut cfg;
    match &cli.command {
        Command::AnalyzeBias { data, train, top_verbs, grid_resolution } => {
            data.apply(cfg);
            put_path(cfg, "train", train);
            put(cfg, "top_verbs", top_verbs);
            put(cfg, "grid_resolution", grid_resolution);
            commands::analyze_bias(cfg)
        }
        Command::RunBaseline { data, metric, baseline, train, test, trials } => {
            data.apply(cfg);
            metric.apply(cfg);
            put(cfg, "baseline", baseline);
            put_path(cfg, "train", train);
            put_path(cfg, "test", test);
            put(cfg, "trials", trials);
            commands::run_baseline(cfg)
        }
        Command::TrainBlindtan { data, metric, train, test, epochs } => {
            data.apply(cfg);
            metric.apply(cfg);
            put_path(cfg, "train", train);
            put_path(cfg, "test", test);
            put(cfg, "blindtan.epochs", epochs);
            commands::train_blindtan(cfg)
        }
        Command::Eval { data, metric_params, metric, test, predictions, checkpoint, references, buckets } => {
            data.apply(cfg);
            metric_params.apply(cfg);
            put(cfg, "metric", metric);
            put_path(cfg, "test", test);
            put_path(cfg, "predictions", predictions);
            put_path(cfg, "checkpoint", checkpoint);
            put_path(cfg, "references", references);
            put(cfg, "buckets", buckets);
            commands::eval(cfg)
        }
        Command::ShuffleTest { data, metric, predictor, train, test, features, fps, segment_length, checkpoint } => {
            data.apply(cfg);
            metric.apply(cfg);
            put(cfg, "predictor", predictor);
            put_path(cfg, "train", train);
            put_path(cfg, "test", test);
            put_path(cfg, "features", features);
            put(cfg, "fps", fps);
            put(cfg, "segment_length", segment_length);
            put_path(cfg, "checkpoint", checkpoint);
            commands::shuffle_test(cfg)
        }
        Command::ExportAnnotations { data, annotations, tasks, annotators_per_sample } => {
            data.apply(cfg);
            put(cfg, "annotations", annotations);
            put_path(cfg, "tasks", tasks);
            put(cfg, "annotators_per_sample", annotators_per_sample);
            commands::export_annotations(cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
