//! Video-blind predictors: Prior-Only, Action-Aware, and uniform sampling.
//!
//! Prior-Only and Uniform never see the query: their signatures take only the
//! sample id (to label the output), the video length and a seed.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LocationPoint, Moment, QuerySample};
use crate::density::{ConditionalPriors, DensityModel};
use crate::error::{DensityError, Error, Result};
use crate::lexicon::VerbLexicon;
use crate::metrics::{recall_at_k, MetricParams};
use crate::seed;

pub const DEFAULT_CANDIDATES: usize = 100;
pub const DEFAULT_UNIFORM_TRIALS: usize = 100;

/// Ranked candidate moments for one sample, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub sample_id: String,
    pub moments: Vec<Moment>,
    pub scores: Vec<f64>,
}

impl RankedPrediction {
    pub fn new(sample_id: impl Into<String>, moments: Vec<Moment>, scores: Vec<f64>) -> Self {
        assert_eq!(moments.len(), scores.len(), "moments and scores must be parallel");
        RankedPrediction {
            sample_id: sample_id.into(),
            moments,
            scores,
        }
    }

    pub fn top(&self) -> Option<&Moment> {
        self.moments.first()
    }

    /// Checks the ranking invariants against a video length.
    pub fn is_valid(&self, video_duration: f64) -> bool {
        !self.moments.is_empty()
            && self.moments.len() == self.scores.len()
            && self.scores.windows(2).all(|w| w[0] >= w[1])
            && self.moments.iter().all(|m| m.end() <= video_duration)
    }
}

/// Line-delimited JSON, one prediction per line.
pub fn predictions_to_jsonl(predictions: &[RankedPrediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("predictions serialize"));
        out.push('\n');
    }
    out
}

pub fn predictions_from_jsonl(text: &str) -> Result<Vec<RankedPrediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let p: RankedPrediction = serde_json::from_str(l)
                .map_err(|e| Error::format("predictions", format!("line {}: {e}", i + 1)))?;
            if p.moments.is_empty() || p.moments.len() != p.scores.len() {
                return Err(Error::format(
                    "predictions",
                    format!("line {}: moments and scores must be parallel and non-empty", i + 1),
                ));
            }
            Ok(p)
        })
        .collect()
}

/// Samples from `model`, ranks by its pdf (stable, so ties keep draw order)
/// and maps back to seconds.
fn rank_by_density(
    model: &DensityModel,
    sample_id: &str,
    video_duration: f64,
    n_candidates: usize,
    rng_seed: u64,
) -> Result<RankedPrediction, DensityError> {
    let draws = model.sample(n_candidates.max(1), rng_seed)?;
    let mut scored: Vec<(LocationPoint, f64)> = draws.into_iter().map(|p| (p, model.pdf(&p))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (moments, scores) = scored
        .into_iter()
        .map(|(p, s)| (p.denormalize(video_duration), s))
        .unzip();
    Ok(RankedPrediction {
        sample_id: sample_id.to_string(),
        moments,
        scores,
    })
}

pub fn prior_only_predict(
    priors: &ConditionalPriors,
    sample_id: &str,
    video_duration: f64,
    n_candidates: usize,
    rng_seed: u64,
) -> Result<RankedPrediction, DensityError> {
    rank_by_density(&priors.global, sample_id, video_duration, n_candidates, rng_seed)
}

/// Uses the conditional prior of the query's first verb when one exists,
/// otherwise behaves exactly like [`prior_only_predict`].
pub fn action_aware_predict(
    priors: &ConditionalPriors,
    lexicon: &VerbLexicon,
    sample: &QuerySample,
    n_candidates: usize,
    rng_seed: u64,
) -> Result<RankedPrediction, DensityError> {
    let conditional = lexicon
        .extract_first_verb(&sample.query)
        .and_then(|verb| priors.for_verb(&verb));
    match conditional {
        Some(model) => rank_by_density(model, &sample.sample_id, sample.video_duration, n_candidates, rng_seed),
        None => prior_only_predict(priors, &sample.sample_id, sample.video_duration, n_candidates, rng_seed),
    }
}

/// Draws `(start, duration)` uniformly on the unit square, redrawing any pair
/// with `start + duration > 1`. Every candidate scores 0 and keeps draw order.
pub fn uniform_predict(sample_id: &str, video_duration: f64, n_candidates: usize, rng_seed: u64) -> RankedPrediction {
    let mut rng = seed::rng(rng_seed);
    let n = n_candidates.max(1);
    let mut moments = Vec::with_capacity(n);
    while moments.len() < n {
        let start: f64 = rng.random();
        let duration: f64 = rng.random();
        if let Some(p) = LocationPoint::new(start, duration).filter(|_| start + duration <= 1.0) {
            moments.push(p.denormalize(video_duration));
        }
    }
    RankedPrediction {
        sample_id: sample_id.to_string(),
        scores: vec![0.0; n],
        moments,
    }
}

/// Which blind baseline to run over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    PriorOnly,
    ActionAware,
    Uniform,
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "prior-only" => Ok(Baseline::PriorOnly),
            "action-aware" => Ok(Baseline::ActionAware),
            "uniform" => Ok(Baseline::Uniform),
            other => Err(format!("unknown baseline `{other}`")),
        }
    }
}

/// Runs a baseline over every sample. Per-sample seeds are derived from
/// `master_seed` and the sample id.
pub fn predict_corpus(
    baseline: Baseline,
    priors: Option<&ConditionalPriors>,
    lexicon: &VerbLexicon,
    corpus: &Corpus,
    n_candidates: usize,
    master_seed: u64,
) -> Result<Vec<RankedPrediction>> {
    let need_priors = || {
        priors.ok_or_else(|| Error::format("baseline", "this baseline needs fitted priors"))
    };
    corpus
        .samples()
        .iter()
        .map(|s| {
            let seed = seed::derive(master_seed, &s.sample_id);
            Ok(match baseline {
                Baseline::PriorOnly => {
                    prior_only_predict(need_priors()?, &s.sample_id, s.video_duration, n_candidates, seed)?
                }
                Baseline::ActionAware => action_aware_predict(need_priors()?, lexicon, s, n_candidates, seed)?,
                Baseline::Uniform => uniform_predict(&s.sample_id, s.video_duration, n_candidates, seed),
            })
        })
        .collect()
}

/// Mean and sample standard deviation of repeated uniform-baseline scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

pub fn uniform_trials(
    corpus: &Corpus,
    params: &MetricParams,
    n_candidates: usize,
    trials: usize,
    master_seed: u64,
) -> Result<TrialSummary> {
    let mut scores = Vec::with_capacity(trials);
    for t in 0..trials.max(1) {
        let trial_seed = seed::derive_index(master_seed, t as u64);
        let preds: Vec<_> = corpus
            .samples()
            .iter()
            .map(|s| uniform_predict(&s.sample_id, s.video_duration, n_candidates, seed::derive(trial_seed, &s.sample_id)))
            .collect();
        scores.push(recall_at_k(&preds, corpus, params)?.score);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = if scores.len() > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TrialSummary { mean, std, scores })
}
