use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use moment_audit::baselines::{
    predict_corpus, predictions_from_jsonl, predictions_to_jsonl, uniform_trials, Baseline, RankedPrediction,
    DEFAULT_CANDIDATES, DEFAULT_UNIFORM_TRIALS,
};
use moment_audit::blindtan::{self, load_checkpoint, to_checkpoint_json, BlindTanConfig};
use moment_audit::corpus::{
    load_activitynet, load_canonical, load_charades, load_reference_sets, merge_records, parse_canonical_records,
    parse_reference_sets, records_to_canonical, to_task_manifest, Corpus, DurationTable, ReferenceMap, Split,
};
use moment_audit::density::{export_density_grid, fit_conditional, ConditionalPriors, DEFAULT_MIN_SAMPLES, DEFAULT_TOP_K};
use moment_audit::io::write_atomic;
use moment_audit::lexicon::{verb_stats, VerbLexicon};
use moment_audit::metrics::{
    duration_bucket_report, human_score_multi_reference, human_score_random, human_score_representative,
    recall_at_k, recall_nn, recall_representative, Comparator, HumanReference, HumanScore, MetricParams,
    DEFAULT_TRIALS,
};
use moment_audit::seed;
use moment_audit::shuffle::{
    default_segment_length, export_diff_distribution, load_feature_dir, sensitivity_from_predictions,
    sensitivity_test, ActionAwarePredictor, FeatureSequence, PlantedSignaturePredictor, Predictor,
    PriorOnlyPredictor, UniformPredictor,
};
use moment_audit::synthetic::SIGNATURE_CHANNEL;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_NAME: &str = "manifest.conf";

const DATA_KEYS: &[&str] = &["dataset", "durations"];
const METRIC_KEYS: &[&str] = &["k", "m", "comparator"];

/// Collects the files a command writes and finishes with the manifest.
struct Outputs {
    dir: PathBuf,
    written: Vec<(String, String)>,
}

impl Outputs {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg
            .path("out")
            .map_err(|_| anyhow!("no output directory; pass --out or set `out` in the config"))?;
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let contents = contents.as_ref();
        write_atomic(self.dir.join(name), contents).with_context(|| format!("writing {name}"))?;
        self.written.push((name.to_string(), hex::encode(Sha256::digest(contents))));
        Ok(())
    }

    /// Writes the manifest last: its presence means every output is complete.
    fn finish(self, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
        let mut text = String::new();
        let _ = writeln!(text, "# moment-audit run manifest; rerun with `moment-audit {command} --config <this file>`");
        let _ = writeln!(text, "# command: {command}");
        let _ = writeln!(text, "# version: {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "# config-sha256: {}", cfg.hash());
        for (name, digest) in &self.written {
            let _ = writeln!(text, "# output: {name} sha256 {digest}");
        }
        text.push_str(&cfg.render());
        let path = self.dir.join(MANIFEST_NAME);
        write_atomic(&path, text.as_bytes()).context("writing manifest")?;
        Ok(path)
    }
}

fn require_seed(cfg: &RunConfig) -> Result<u64> {
    cfg.get("seed")?
        .ok_or_else(|| anyhow!("this command is stochastic; pass --seed or set `seed` in the config"))
}

fn allowed<'a>(groups: &[&[&'a str]]) -> Vec<&'a str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

fn load_split(cfg: &mut RunConfig, key: &str, split: Split) -> Result<Corpus> {
    let path = cfg.path(key)?;
    let dataset: String = cfg.value_or("dataset", "canonical".to_string())?;
    let context = || format!("loading `{key}` ({dataset}) from {}", path.display());
    let loaded = match dataset.as_str() {
        "canonical" => load_canonical(&path, split).with_context(context)?,
        "activitynet" => load_activitynet(&path, split).with_context(context)?,
        "charades" => {
            let durations = cfg.path("durations")?;
            let table = DurationTable::load(&durations)
                .with_context(|| format!("loading durations from {}", durations.display()))?;
            load_charades(&path, &table, split).with_context(context)?
        }
        other => bail!("unknown dataset `{other}` (expected canonical, charades or activitynet)"),
    };
    if !loaded.warnings.is_empty() {
        log::info!("{}: {} loader warnings", path.display(), loaded.warnings.len());
    }
    Ok(loaded.corpus)
}

fn lexicon(cfg: &RunConfig) -> Result<VerbLexicon> {
    match cfg.get::<PathBuf>("lexicon")? {
        Some(path) => VerbLexicon::load(&path).with_context(|| format!("loading lexicon {}", path.display())),
        None => Ok(VerbLexicon::bundled()),
    }
}

fn metric_params(cfg: &mut RunConfig) -> Result<MetricParams> {
    let k = cfg.value_or("k", 1usize)?;
    let m = cfg.value_or("m", 0.5f64)?;
    let comparator = match cfg.value_or("comparator", "strict".to_string())?.as_str() {
        "strict" => Comparator::Strict,
        "inclusive" => Comparator::Inclusive,
        other => bail!("unknown comparator `{other}` (expected strict or inclusive)"),
    };
    Ok(MetricParams::new(k, m)?.with_comparator(comparator))
}

fn fit_priors(cfg: &mut RunConfig, lexicon: &VerbLexicon) -> Result<ConditionalPriors> {
    let train = load_split(cfg, "train", Split::Train)?;
    let top_k = cfg.value_or("top_k", DEFAULT_TOP_K)?;
    let min_samples = cfg.value_or("min_samples", DEFAULT_MIN_SAMPLES)?;
    let priors = fit_conditional(&train, lexicon, top_k, min_samples).context("fitting location priors")?;
    Ok(priors)
}

fn load_predictions(path: &Path) -> Result<Vec<RankedPrediction>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    predictions_from_jsonl(&text).with_context(|| format!("parsing predictions {}", path.display()))
}

fn human_text(label: &str, params: &MetricParams, score: &HumanScore) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# metric: {label}");
    let _ = writeln!(out, "# m: {}", params.m);
    let _ = writeln!(out, "# comparator: {:?}", params.comparator);
    let _ = writeln!(out, "# trials: {}", score.trials.len());
    let _ = writeln!(out, "# mean: {:.4}", score.mean);
    let _ = writeln!(out, "# std: {:.4}", score.std);
    out.push_str("trial,score\n");
    for (t, s) in score.trials.iter().enumerate() {
        let _ = writeln!(out, "{t},{s}");
    }
    out
}

/// Verb statistics and location-prior density grids for a training split.
pub fn analyze_bias(cfg: &mut RunConfig) -> Result<String> {
    cfg.check_keys(
        &allowed(&[DATA_KEYS, &["train", "lexicon", "grid_resolution", "top_verbs", "min_samples"]]),
        &[],
    )?;
    let mut out = Outputs::new(cfg)?;
    let lexicon = lexicon(cfg)?;
    let train = load_split(cfg, "train", Split::Train)?;
    let resolution = cfg.value_or("grid_resolution", 100usize)?;
    let top_verbs = cfg.value_or("top_verbs", 30usize)?;
    let min_samples = cfg.value_or("min_samples", DEFAULT_MIN_SAMPLES)?;

    let stats = verb_stats(&train, &lexicon);
    let mut verbs = String::from("verb,count\n");
    for verb in stats.top_k(stats.counts.len()) {
        let _ = writeln!(verbs, "{verb},{}", stats.counts[&verb]);
    }
    out.write("verbs.csv", verbs)?;

    let mut coverage = String::from("k,token_coverage,type_coverage\n");
    let mut ks = vec![1, 5, 10, 20, 30, 50, 100, top_verbs];
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let c = stats.coverage(k);
        let _ = writeln!(coverage, "{k},{},{}", c.token, c.types);
    }
    out.write("coverage.csv", coverage)?;

    let priors = fit_conditional(&train, &lexicon, top_verbs, min_samples).context("fitting location priors")?;
    out.write("density_global.csv", export_density_grid(&priors.global, resolution)?.to_csv())?;
    for (verb, model) in &priors.per_verb {
        let name: String = verb.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        out.write(&format!("verb_density/{name}.csv"), export_density_grid(model, resolution)?.to_csv())?;
    }

    let top = stats.coverage(top_verbs);
    let mut summary = String::new();
    let _ = writeln!(summary, "samples: {}", train.len());
    let _ = writeln!(summary, "samples_with_verb: {}", stats.total);
    let _ = writeln!(summary, "distinct_verbs: {}", stats.counts.len());
    let _ = writeln!(summary, "top{top_verbs}_token_coverage: {:.4}", top.token);
    let _ = writeln!(summary, "top{top_verbs}_type_coverage: {:.4}", top.types);
    let _ = writeln!(summary, "verb_density_grids: {}", priors.per_verb.len());
    for (verb, reason) in &priors.dropped {
        let _ = writeln!(summary, "dropped: {verb} ({reason})");
    }
    out.write("bias_summary.txt", &summary)?;
    out.finish("analyze-bias", cfg)?;
    Ok(summary)
}

/// Fits priors on the training split, predicts on the test split and scores.
pub fn run_baseline(cfg: &mut RunConfig) -> Result<String> {
    cfg.check_keys(
        &allowed(&[
            DATA_KEYS,
            METRIC_KEYS,
            &["train", "test", "lexicon", "baseline", "top_k", "min_samples", "candidates", "trials"],
        ]),
        &[],
    )?;
    let seed = require_seed(cfg)?;
    let mut out = Outputs::new(cfg)?;
    let name: String = cfg.require("baseline")?;
    let baseline: Baseline = name.parse().map_err(|e: String| anyhow!(e))?;
    let lexicon = lexicon(cfg)?;
    let test = load_split(cfg, "test", Split::Test)?;
    let params = metric_params(cfg)?;
    let candidates = cfg.value_or("candidates", DEFAULT_CANDIDATES)?;
    let priors = match baseline {
        Baseline::Uniform => None,
        _ => Some(fit_priors(cfg, &lexicon)?),
    };

    let predictions = predict_corpus(baseline, priors.as_ref(), &lexicon, &test, candidates, seed)?;
    let report = recall_at_k(&predictions, &test, &params)?;
    out.write("predictions.jsonl", predictions_to_jsonl(&predictions))?;

    let mut text = format!("# baseline: {name}\n");
    let mut summary = format!("{name}: R@{} IoU>{} = {:.2}\n", params.k, params.m, report.score);
    if baseline == Baseline::Uniform {
        let trials = cfg.value_or("trials", DEFAULT_UNIFORM_TRIALS)?;
        let t = uniform_trials(&test, &params, candidates, trials, seed)?;
        let _ = writeln!(text, "# trials: {}", t.scores.len());
        let _ = writeln!(text, "# trial_mean: {:.4}", t.mean);
        let _ = writeln!(text, "# trial_std: {:.4}", t.std);
        let mut csv = String::from("trial,score\n");
        for (i, s) in t.scores.iter().enumerate() {
            let _ = writeln!(csv, "{i},{s}");
        }
        out.write("trials.csv", csv)?;
        let _ = writeln!(summary, "{name}: mean over {} trials = {:.2} (std {:.2})", t.scores.len(), t.mean, t.std);
    }
    text.push_str(&report.to_text("standard", &params));
    out.write("report.txt", text)?;
    out.finish("run-baseline", cfg)?;
    Ok(summary)
}

fn blindtan_config(cfg: &mut RunConfig, seed: u64) -> Result<BlindTanConfig> {
    let serde_json::Value::Object(mut fields) = serde_json::to_value(BlindTanConfig::default())? else {
        unreachable!("config serializes to an object")
    };
    let overrides: Vec<(String, String)> = cfg
        .with_prefix("blindtan.")
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    for (key, raw) in overrides {
        if key == "seed" {
            bail!("set the Blind-TAN seed with the global `seed` key, not `blindtan.seed`");
        }
        if !fields.contains_key(&key) {
            bail!("unknown Blind-TAN option `blindtan.{key}`");
        }
        let value = serde_json::from_str(&raw).unwrap_or(serde_json::Value::String(raw));
        fields.insert(key, value);
    }
    for (key, value) in &fields {
        if key != "seed" && !cfg.contains(&format!("blindtan.{key}")) {
            cfg.set(format!("blindtan.{key}"), value.to_string());
        }
    }
    fields.insert("seed".into(), seed.into());
    let config: BlindTanConfig =
        serde_json::from_value(serde_json::Value::Object(fields)).context("invalid Blind-TAN option")?;
    config.validate()?;
    Ok(config)
}

pub fn train_blindtan(cfg: &mut RunConfig) -> Result<String> {
    cfg.check_keys(&allowed(&[DATA_KEYS, METRIC_KEYS, &["train", "test", "candidates"]]), &["blindtan."])?;
    let seed = require_seed(cfg)?;
    let mut out = Outputs::new(cfg)?;
    let config = blindtan_config(cfg, seed)?;
    let train = load_split(cfg, "train", Split::Train)?;
    let (model, log) = blindtan::train(&config, &train).map_err(|e| match e {
        e @ moment_audit::error::BlindTanError::NonFiniteLoss { .. } => anyhow!(
            "{e}; try a smaller `blindtan.learning_rate` or `blindtan.prior_map_lr_scale`"
        ),
        e => e.into(),
    })?;
    out.write("checkpoint.json", to_checkpoint_json(&model))?;
    out.write("training_log.csv", log.to_csv())?;
    let mut summary = format!(
        "trained {} epochs: loss {:.6} -> {:.6}\n",
        config.epochs,
        log.initial_loss(),
        log.final_loss()
    );
    if cfg.contains("test") {
        let test = load_split(cfg, "test", Split::Test)?;
        let params = metric_params(cfg)?;
        let candidates = cfg.value_or("candidates", DEFAULT_CANDIDATES)?;
        let predictions = model.predict_corpus(&test, candidates);
        let report = recall_at_k(&predictions, &test, &params)?;
        out.write("predictions.jsonl", predictions_to_jsonl(&predictions))?;
        out.write("report.txt", report.to_text("standard", &params))?;
        let _ = writeln!(summary, "test R@{} IoU>{} = {:.2}", params.k, params.m, report.score);
    }
    out.finish("train-blindtan", cfg)?;
    Ok(summary)
}

fn reference_sets(cfg: &RunConfig, corpus: &Corpus) -> Result<ReferenceMap> {
    match cfg.get::<PathBuf>("references")? {
        Some(path) => load_reference_sets(&path).with_context(|| format!("loading references {}", path.display())),
        None => corpus
            .reference_sets
            .clone()
            .ok_or_else(|| anyhow!("this metric needs reference sets; set `references` or use a multi-moment test file")),
    }
}

fn eval_predictions(cfg: &mut RunConfig, test: &Corpus, params: &MetricParams) -> Result<Vec<RankedPrediction>> {
    match (cfg.get::<PathBuf>("predictions")?, cfg.get::<PathBuf>("checkpoint")?) {
        (Some(path), None) => load_predictions(&path),
        (None, Some(path)) => {
            let model = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            let candidates = cfg.value_or("candidates", params.k)?;
            Ok(model.predict_corpus(test, candidates))
        }
        (Some(_), Some(_)) => bail!("set only one of `predictions` and `checkpoint`"),
        (None, None) => bail!("this metric scores model output; set `predictions` or `checkpoint`"),
    }
}

/// Scores predictions (standard, nearest-neighbour or representative) or the
/// annotators themselves (the `human-*` metrics).
pub fn eval(cfg: &mut RunConfig) -> Result<String> {
    cfg.check_keys(
        &allowed(&[
            DATA_KEYS,
            METRIC_KEYS,
            &["test", "metric", "predictions", "checkpoint", "candidates", "references", "buckets", "trials"],
        ]),
        &[],
    )?;
    let metric: String = cfg.value_or("metric", "standard".to_string())?;
    let test = load_split(cfg, "test", Split::Test)?;
    let params = metric_params(cfg)?;
    let mut out = Outputs::new(cfg)?;
    let (text, score) = match metric.as_str() {
        "standard" | "nn" | "representative" => {
            let predictions = eval_predictions(cfg, &test, &params)?;
            let report = match metric.as_str() {
                "standard" => recall_at_k(&predictions, &test, &params)?,
                "nn" => recall_nn(&predictions, &reference_sets(cfg, &test)?, &params),
                _ => recall_representative(&predictions, &reference_sets(cfg, &test)?, &params)?,
            };
            if let Some(edges) = cfg.get::<String>("buckets")? {
                if metric != "standard" {
                    bail!("`buckets` is only supported with the standard metric");
                }
                let edges = edges
                    .split(',')
                    .map(|e| e.trim().parse::<f64>().map_err(|_| anyhow!("bad bucket edge `{e}`")))
                    .collect::<Result<Vec<_>>>()?;
                let buckets = duration_bucket_report(&predictions, &test, &params, &edges)?;
                let mut csv = String::from("lo,hi,success,failure\n");
                for b in &buckets {
                    let (lo, hi) = b.range.unwrap_or((edges[edges.len() - 1], f64::INFINITY));
                    let _ = writeln!(csv, "{lo},{hi},{},{}", b.success, b.failure);
                }
                out.write("buckets.csv", csv)?;
            }
            (report.to_text(&metric, &params), report.score)
        }
        "human-representative" => {
            let report = human_score_representative(&reference_sets(cfg, &test)?, &test, &params)?;
            (report.to_text(&metric, &params), report.score)
        }
        "human-random" | "human-nn" | "human-rep-excluding-rep" | "human-rep-including-rep" => {
            let seed = require_seed(cfg)?;
            let trials = cfg.value_or("trials", DEFAULT_TRIALS)?;
            let refs = reference_sets(cfg, &test)?;
            let score = match metric.as_str() {
                "human-random" => human_score_random(&refs, &test, &params, trials, seed)?,
                "human-nn" => human_score_multi_reference(&refs, &params, HumanReference::NearestNeighbor, trials, seed)?,
                other => {
                    let reference = HumanReference::Representative {
                        exclude_representative: other == "human-rep-excluding-rep",
                    };
                    human_score_multi_reference(&refs, &params, reference, trials, seed)?
                }
            };
            (human_text(&metric, &params, &score), score.mean)
        }
        other => bail!(
            "unknown metric `{other}` (expected standard, nn, representative, human-representative, \
             human-random, human-nn, human-rep-excluding-rep or human-rep-including-rep)"
        ),
    };
    out.write("report.txt", text)?;
    out.finish("eval", cfg)?;
    Ok(format!("{metric}: {score:.2}\n"))
}

fn features(cfg: &RunConfig) -> Result<Option<BTreeMap<String, FeatureSequence>>> {
    cfg.get::<PathBuf>("features")?
        .map(|dir| load_feature_dir(&dir).with_context(|| format!("loading features from {}", dir.display())))
        .transpose()
}

/// Compares predictions on original and segment-shuffled video features.
pub fn shuffle_test(cfg: &mut RunConfig) -> Result<String> {
    cfg.check_keys(
        &allowed(&[
            DATA_KEYS,
            METRIC_KEYS,
            &[
                "train",
                "test",
                "lexicon",
                "predictor",
                "features",
                "fps",
                "segment_length",
                "candidates",
                "top_k",
                "min_samples",
                "checkpoint",
                "planted_channel",
                "planted_threshold",
                "original_predictions",
                "shuffled_predictions",
                "grid_resolution",
            ],
        ]),
        &[],
    )?;
    let seed = require_seed(cfg)?;
    let mut out = Outputs::new(cfg)?;
    let name: String = cfg.require("predictor")?;
    let test = load_split(cfg, "test", Split::Test)?;
    let params = metric_params(cfg)?;
    let resolution = cfg.value_or("grid_resolution", 50usize)?;
    let predictor_seed = seed::derive(seed, "predictor");

    let report = if name == "external" {
        let original = load_predictions(&cfg.path("original_predictions")?)?;
        let shuffled = load_predictions(&cfg.path("shuffled_predictions")?)?;
        sensitivity_from_predictions(&original, &shuffled, &test, &params)?
    } else {
        let features = features(cfg)?;
        let segment_length = match (cfg.get::<usize>("segment_length")?, cfg.get::<f64>("fps")?) {
            (Some(len), _) => len,
            (None, Some(fps)) => cfg.value_or("segment_length", default_segment_length(fps))?,
            (None, None) if features.is_none() => cfg.value_or("segment_length", 1usize)?,
            (None, None) => bail!("set `segment_length` or `fps` to shuffle features"),
        };
        let features = features.unwrap_or_default();
        let lexicon = lexicon(cfg)?;
        let candidates = cfg.value_or("candidates", DEFAULT_CANDIDATES)?;
        let priors = match name.as_str() {
            "prior-only" | "action-aware" => Some(fit_priors(cfg, &lexicon)?),
            _ => None,
        };
        let model = match name.as_str() {
            "blindtan" => {
                let path = cfg.path("checkpoint")?;
                Some(load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?)
            }
            _ => None,
        };
        let planted;
        let prior_only;
        let action_aware;
        let uniform;
        let predictor: &dyn Predictor = match name.as_str() {
            "prior-only" => {
                prior_only = PriorOnlyPredictor {
                    priors: priors.as_ref().expect("fitted above"),
                    n_candidates: candidates,
                    seed: predictor_seed,
                };
                &prior_only
            }
            "action-aware" => {
                action_aware = ActionAwarePredictor {
                    priors: priors.as_ref().expect("fitted above"),
                    lexicon: &lexicon,
                    n_candidates: candidates,
                    seed: predictor_seed,
                };
                &action_aware
            }
            "uniform" => {
                uniform = UniformPredictor {
                    n_candidates: candidates,
                    seed: predictor_seed,
                };
                &uniform
            }
            "blindtan" => model.as_ref().expect("loaded above"),
            "planted" => {
                planted = PlantedSignaturePredictor {
                    fps: cfg.require("fps")?,
                    channel: cfg.value_or("planted_channel", SIGNATURE_CHANNEL)?,
                    threshold: cfg.value_or("planted_threshold", 0.5f32)?,
                };
                &planted
            }
            other => bail!(
                "unknown predictor `{other}` (expected prior-only, action-aware, uniform, blindtan, planted or external)"
            ),
        };
        sensitivity_test(predictor, &test, &features, &params, segment_length, seed)?
    };

    out.write("diffs.csv", report.diffs_csv())?;
    if report.diffs.len() >= 2 {
        out.write("diff_density.csv", export_diff_distribution(&report, resolution)?.to_csv())?;
    }
    let mut summary = String::new();
    let _ = writeln!(summary, "predictor: {name}");
    let _ = writeln!(summary, "score_original: {:.4}", report.score_original);
    let _ = writeln!(summary, "score_shuffled: {:.4}", report.score_shuffled);
    let _ = writeln!(summary, "score_delta: {:.4}", report.score_delta());
    let _ = writeln!(summary, "unchanged_fraction: {:.4}", report.unchanged_fraction);
    out.write("summary.txt", &summary)?;
    out.finish("shuffle-test", cfg)?;
    Ok(summary)
}

/// Merges annotation-tool exports into one canonical reference file, and/or
/// writes a task manifest for the tool from a corpus.
pub fn export_annotations(cfg: &mut RunConfig) -> Result<String> {
    cfg.check_keys(&allowed(&[DATA_KEYS, &["annotations", "tasks", "annotators_per_sample"]]), &[])?;
    if !cfg.contains("annotations") && !cfg.contains("tasks") {
        bail!("set `annotations` (tool exports to merge) and/or `tasks` (corpus to build a task manifest from)");
    }
    let mut out = Outputs::new(cfg)?;
    let mut summary = String::new();
    if let Some(list) = cfg.get::<String>("annotations")? {
        let mut records = Vec::new();
        for path in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            let (recs, _) = parse_canonical_records(&text).with_context(|| format!("parsing {path}"))?;
            records.extend(recs);
        }
        let n_records = records.len();
        let merged = merge_records(records)?;
        if let Some(expected) = cfg.get::<usize>("annotators_per_sample")? {
            if let Some(r) = merged.iter().find(|r| r.moments.len() != expected) {
                bail!("sample `{}` has {} annotations, expected {expected}", r.sample_id, r.moments.len());
            }
        }
        let text = records_to_canonical(&merged);
        // the merged file must load back as reference sets unchanged
        let refs = parse_reference_sets(&text).context("merged annotations failed validation")?;
        out.write("annotations.jsonl", &text)?;
        let _ = writeln!(summary, "annotation_records: {n_records}");
        let _ = writeln!(summary, "samples: {}", refs.len());
        let sizes: Vec<usize> = refs.values().map(|s| s.len()).collect();
        if let (Some(lo), Some(hi)) = (sizes.iter().min(), sizes.iter().max()) {
            let _ = writeln!(summary, "annotations_per_sample: {lo}..={hi}");
        }
    }
    if cfg.contains("tasks") {
        let corpus = load_split(cfg, "tasks", Split::Test)?;
        out.write("tasks.jsonl", to_task_manifest(&corpus))?;
        let _ = writeln!(summary, "tasks: {}", corpus.len());
    }
    out.finish("export-annotations", cfg)?;
    Ok(summary)
}
