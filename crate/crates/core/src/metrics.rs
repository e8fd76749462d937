//! Temporal IoU, R@k(IoU>m), multi-reference metrics, and the human-score
//! protocols.
//!
//! The default comparator is strict (`IoU > m`). Many public evaluation
//! scripts use `>=`; select [`Comparator::Inclusive`] to match them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng as _;
use serde::Serialize;

use crate::baselines::RankedPrediction;
use crate::corpus::{Corpus, Moment, ReferenceMap, ReferenceSet};
use crate::error::MetricError;
use crate::seed;

pub const DEFAULT_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    /// `IoU > m`
    #[default]
    Strict,
    /// `IoU >= m`
    Inclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricParams {
    pub k: usize,
    pub m: f64,
    pub comparator: Comparator,
}

impl MetricParams {
    pub fn new(k: usize, m: f64) -> Result<Self, MetricError> {
        if k == 0 {
            return Err(MetricError::ZeroK);
        }
        if !(0.0..1.0).contains(&m) {
            return Err(MetricError::Threshold(m));
        }
        Ok(MetricParams {
            k,
            m,
            comparator: Comparator::Strict,
        })
    }

    pub fn with_comparator(mut self, comparator: Comparator) -> Self {
        self.comparator = comparator;
        self
    }

    pub fn passes(&self, iou: f64) -> bool {
        match self.comparator {
            Comparator::Strict => iou > self.m,
            Comparator::Inclusive => iou >= self.m,
        }
    }
}

impl Default for MetricParams {
    /// R@1(IoU>0.5).
    fn default() -> Self {
        MetricParams::new(1, 0.5).expect("valid defaults")
    }
}

/// Intersection over union of two intervals; 0 when the union is empty.
pub fn iou(a: &Moment, b: &Moment) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleScore {
    pub best_iou: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub score: f64,
    pub hits: usize,
    pub total: usize,
    /// Samples skipped because they had no references.
    pub excluded: usize,
    pub per_sample: BTreeMap<String, SampleScore>,
}

impl EvalReport {
    fn from_scores(per_sample: BTreeMap<String, SampleScore>, excluded: usize) -> Self {
        let hits = per_sample.values().filter(|s| s.hit).count();
        let total = per_sample.len();
        EvalReport {
            score: percentage(hits, total),
            hits,
            total,
            excluded,
            per_sample,
        }
    }

    /// Summary lines (prefixed `# `) followed by `sample_id,best_iou,hit` rows.
    pub fn to_text(&self, label: &str, params: &MetricParams) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# metric: {label}");
        let _ = writeln!(out, "# k: {}", params.k);
        let _ = writeln!(out, "# m: {}", params.m);
        let _ = writeln!(out, "# comparator: {:?}", params.comparator);
        let _ = writeln!(out, "# score: {:.4}", self.score);
        let _ = writeln!(out, "# hits: {}", self.hits);
        let _ = writeln!(out, "# total: {}", self.total);
        let _ = writeln!(out, "# excluded: {}", self.excluded);
        out.push_str("sample_id,best_iou,hit\n");
        for (id, s) in &self.per_sample {
            let _ = writeln!(out, "{id},{},{}", s.best_iou, u8::from(s.hit));
        }
        out
    }
}

fn percentage(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

fn best_iou(prediction: &RankedPrediction, k: usize, references: &[Moment]) -> f64 {
    prediction
        .moments
        .iter()
        .take(k)
        .flat_map(|p| references.iter().map(move |r| iou(p, r)))
        .fold(0.0, f64::max)
}

fn index_predictions(predictions: &[RankedPrediction]) -> HashMap<&str, &RankedPrediction> {
    predictions.iter().map(|p| (p.sample_id.as_str(), p)).collect()
}

/// Percentage of corpus samples with a top-k prediction whose IoU with the
/// ground truth passes the threshold.
pub fn recall_at_k(
    predictions: &[RankedPrediction],
    corpus: &Corpus,
    params: &MetricParams,
) -> Result<EvalReport, MetricError> {
    let by_id = index_predictions(predictions);
    let missing: Vec<String> = corpus
        .samples()
        .iter()
        .filter(|s| !by_id.contains_key(s.sample_id.as_str()))
        .map(|s| s.sample_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricError::MissingPredictions(missing));
    }
    let per_sample = corpus
        .samples()
        .iter()
        .map(|s| {
            let best = best_iou(by_id[s.sample_id.as_str()], params.k, std::slice::from_ref(&s.ground_truth));
            (
                s.sample_id.clone(),
                SampleScore {
                    best_iou: best,
                    hit: params.passes(best),
                },
            )
        })
        .collect();
    Ok(EvalReport::from_scores(per_sample, 0))
}

/// Nearest-neighbor reference metric: a sample is a hit when some top-k
/// prediction passes the threshold against any reference. Predictions with
/// no reference set are excluded and counted.
pub fn recall_nn(predictions: &[RankedPrediction], reference_sets: &ReferenceMap, params: &MetricParams) -> EvalReport {
    let mut per_sample = BTreeMap::new();
    let mut excluded = 0;
    for p in predictions {
        match reference_sets.get(&p.sample_id) {
            Some(set) => {
                let best = best_iou(p, params.k, set.references());
                per_sample.insert(
                    p.sample_id.clone(),
                    SampleScore {
                        best_iou: best,
                        hit: params.passes(best),
                    },
                );
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        log::warn!("recall_nn: {excluded} predictions have no reference set and were excluded");
    }
    EvalReport::from_scores(per_sample, excluded)
}

/// Summed in sorted order so that references with the same multiset of
/// IoUs (e.g. duplicates) score bit-identically and tie exactly.
fn mean_iou_to_others(refs: &[Moment], r: usize) -> f64 {
    let mut ious: Vec<f64> = refs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != r)
        .map(|(_, other)| iou(&refs[r], other))
        .collect();
    ious.sort_by(f64::total_cmp);
    ious.iter().sum::<f64>() / (refs.len() - 1) as f64
}

/// Index of the reference with the largest mean IoU to the others; ties go
/// to the lowest index.
pub fn representative_reference(refs: &ReferenceSet) -> Result<usize, MetricError> {
    let moments = refs.references();
    if moments.len() < 2 {
        return Err(MetricError::TooFewReferences(refs.sample_id.clone()));
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for r in 0..moments.len() {
        let score = mean_iou_to_others(moments, r);
        if score > best_score {
            best = r;
            best_score = score;
        }
    }
    Ok(best)
}

/// R@k against each sample's representative reference only.
pub fn recall_representative(
    predictions: &[RankedPrediction],
    reference_sets: &ReferenceMap,
    params: &MetricParams,
) -> Result<EvalReport, MetricError> {
    let mut per_sample = BTreeMap::new();
    let mut excluded = 0;
    for p in predictions {
        let Some(set) = reference_sets.get(&p.sample_id) else {
            excluded += 1;
            continue;
        };
        let rep = set.references()[representative_reference(set)?];
        let best = best_iou(p, params.k, &[rep]);
        per_sample.insert(
            p.sample_id.clone(),
            SampleScore {
                best_iou: best,
                hit: params.passes(best),
            },
        );
    }
    if excluded > 0 {
        log::warn!("recall_representative: {excluded} predictions have no reference set and were excluded");
    }
    Ok(EvalReport::from_scores(per_sample, excluded))
}

fn check_equal_counts(reference_sets: &ReferenceMap, min: usize) -> Result<(), MetricError> {
    let mut sizes = reference_sets.values().map(|s| (s.sample_id.as_str(), s.len()));
    if let Some((id, first)) = sizes.next() {
        if first < min {
            return Err(MetricError::TooFewReferences(id.to_string()));
        }
        for (_, n) in sizes {
            if n != first {
                return Err(MetricError::UnequalReferenceCounts(first, n));
            }
        }
    }
    Ok(())
}

fn score_against_ground_truth(
    corpus: &Corpus,
    params: &MetricParams,
    picks: impl Iterator<Item = (String, Moment)>,
) -> Result<EvalReport, MetricError> {
    let by_id = corpus.by_id();
    let mut per_sample = BTreeMap::new();
    for (id, moment) in picks {
        let sample = by_id
            .get(id.as_str())
            .ok_or_else(|| MetricError::UnknownSample(id.clone()))?;
        let v = iou(&moment, &sample.ground_truth);
        per_sample.insert(
            id,
            SampleScore {
                best_iou: v,
                hit: params.passes(v),
            },
        );
    }
    Ok(EvalReport::from_scores(per_sample, 0))
}

/// Scores each sample's representative annotation against the dataset's
/// ground truth.
pub fn human_score_representative(
    reference_sets: &ReferenceMap,
    corpus: &Corpus,
    params: &MetricParams,
) -> Result<EvalReport, MetricError> {
    check_equal_counts(reference_sets, 2)?;
    let picks = reference_sets
        .values()
        .map(|set| Ok((set.sample_id.clone(), set.references()[representative_reference(set)?])))
        .collect::<Result<Vec<_>, MetricError>>()?;
    score_against_ground_truth(corpus, params, picks.into_iter())
}

/// Mean and spread of repeated randomized human scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HumanScore {
    pub mean: f64,
    /// Sample standard deviation across trials (0 for a single trial).
    pub std: f64,
    pub trials: Vec<f64>,
}

impl HumanScore {
    fn from_trials(trials: Vec<f64>) -> Self {
        let n = trials.len() as f64;
        let mean = trials.iter().sum::<f64>() / n;
        let std = if trials.len() > 1 {
            (trials.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        HumanScore { mean, std, trials }
    }
}

/// Each trial picks one annotation per sample uniformly at random and scores
/// it against the dataset ground truth.
pub fn human_score_random(
    reference_sets: &ReferenceMap,
    corpus: &Corpus,
    params: &MetricParams,
    trials: usize,
    rng_seed: u64,
) -> Result<HumanScore, MetricError> {
    if trials == 0 {
        return Err(MetricError::ZeroTrials);
    }
    let mut scores = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = seed::rng(seed::derive_index(rng_seed, t as u64));
        let picks: Vec<_> = reference_sets
            .values()
            .map(|set| {
                let j = rng.random_range(0..set.len());
                (set.sample_id.clone(), set.references()[j])
            })
            .collect();
        scores.push(score_against_ground_truth(corpus, params, picks.into_iter())?.score);
    }
    Ok(HumanScore::from_trials(scores))
}

/// Which multi-reference target a randomly chosen annotation is scored
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HumanReference {
    /// Best IoU over the other annotations of the sample (the chosen one is
    /// left out of the reference pool).
    NearestNeighbor,
    /// The sample's representative annotation. With `exclude_representative`
    /// the candidate is drawn from the remaining annotations only.
    Representative { exclude_representative: bool },
}

impl HumanReference {
    pub fn label(&self) -> &'static str {
        match self {
            HumanReference::NearestNeighbor => "human-nn",
            HumanReference::Representative {
                exclude_representative: true,
            } => "human-rep-excluding-rep",
            HumanReference::Representative {
                exclude_representative: false,
            } => "human-rep-including-rep",
        }
    }
}

pub fn human_score_multi_reference(
    reference_sets: &ReferenceMap,
    params: &MetricParams,
    reference: HumanReference,
    trials: usize,
    rng_seed: u64,
) -> Result<HumanScore, MetricError> {
    if trials == 0 {
        return Err(MetricError::ZeroTrials);
    }
    let mut reps = Vec::with_capacity(reference_sets.len());
    for set in reference_sets.values() {
        reps.push(representative_reference(set)?);
    }
    let mut scores = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = seed::rng(seed::derive_index(rng_seed, t as u64));
        let mut hits = 0;
        for (set, &rep) in reference_sets.values().zip(&reps) {
            let refs = set.references();
            let best = match reference {
                HumanReference::NearestNeighbor => {
                    let pick = rng.random_range(0..refs.len());
                    refs.iter()
                        .enumerate()
                        .filter(|(j, _)| *j != pick)
                        .map(|(_, r)| iou(&refs[pick], r))
                        .fold(0.0, f64::max)
                }
                HumanReference::Representative {
                    exclude_representative,
                } => {
                    let pick = if exclude_representative {
                        let j = rng.random_range(0..refs.len() - 1);
                        if j >= rep {
                            j + 1
                        } else {
                            j
                        }
                    } else {
                        rng.random_range(0..refs.len())
                    };
                    iou(&refs[pick], &refs[rep])
                }
            };
            if params.passes(best) {
                hits += 1;
            }
        }
        scores.push(percentage(hits, reference_sets.len()));
    }
    Ok(HumanScore::from_trials(scores))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationBucket {
    /// `None` for the overflow bucket.
    pub range: Option<(f64, f64)>,
    pub success: usize,
    pub failure: usize,
}

/// Hit/miss counts bucketed by ground-truth moment length in seconds.
/// Buckets are half-open `[edge_i, edge_{i+1})`; lengths outside every
/// bucket land in a trailing overflow bucket.
pub fn duration_bucket_report(
    predictions: &[RankedPrediction],
    corpus: &Corpus,
    params: &MetricParams,
    bucket_edges: &[f64],
) -> Result<Vec<DurationBucket>, MetricError> {
    if bucket_edges.len() < 2 || bucket_edges.windows(2).any(|w| w[0].is_nan() || w[1].is_nan() || w[0] >= w[1]) {
        return Err(MetricError::BucketEdges);
    }
    let report = recall_at_k(predictions, corpus, params)?;
    let mut buckets: Vec<DurationBucket> = bucket_edges
        .windows(2)
        .map(|w| DurationBucket {
            range: Some((w[0], w[1])),
            success: 0,
            failure: 0,
        })
        .collect();
    buckets.push(DurationBucket {
        range: None,
        success: 0,
        failure: 0,
    });
    let overflow = buckets.len() - 1;
    for s in corpus.samples() {
        let len = s.ground_truth.length();
        let idx = bucket_edges
            .windows(2)
            .position(|w| w[0] <= len && len < w[1])
            .unwrap_or(overflow);
        if report.per_sample[&s.sample_id].hit {
            buckets[idx].success += 1;
        } else {
            buckets[idx].failure += 1;
        }
    }
    Ok(buckets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{QuerySample, Split};

    fn m(s: f64, e: f64) -> Moment {
        Moment::new(s, e).unwrap()
    }

    fn pred(id: &str, moments: &[Moment]) -> RankedPrediction {
        RankedPrediction::new(id, moments.to_vec(), vec![0.0; moments.len()])
    }

    fn corpus_of(gts: &[Moment]) -> Corpus {
        let samples = gts
            .iter()
            .enumerate()
            .map(|(i, gt)| QuerySample {
                sample_id: format!("s{i}"),
                video_id: format!("v{i}"),
                video_duration: 100.0,
                query: "q".into(),
                ground_truth: *gt,
            })
            .collect();
        Corpus::new(samples, Split::Test, None).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&m(0.0, 6.0), &m(0.0, 6.0)), 1.0);
        assert_eq!(iou(&m(0.0, 4.0), &m(6.0, 10.0)), 0.0);
        assert!((iou(&m(0.0, 6.0), &m(3.0, 9.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&m(2.0, 2.0), &m(2.0, 2.0)), 0.0);
    }

    #[test]
    fn recall_boundaries() {
        let corpus = corpus_of(&[m(0.0, 10.0), m(0.0, 10.0)]);
        let params = MetricParams::default();
        let exact = recall_at_k(&[pred("s0", &[m(0.0, 10.0)]), pred("s1", &[m(0.0, 10.0)])], &corpus, &params).unwrap();
        assert_eq!(exact.score, 100.0);
        // [0,5] vs [0,10] is exactly 0.5
        let half = recall_at_k(&[pred("s0", &[m(0.0, 5.0)]), pred("s1", &[m(0.0, 10.0)])], &corpus, &params).unwrap();
        assert_eq!((half.score, half.hits, half.total), (50.0, 1, 2));
        let inclusive = params.with_comparator(Comparator::Inclusive);
        let half_inc = recall_at_k(&[pred("s0", &[m(0.0, 5.0)]), pred("s1", &[m(0.0, 10.0)])], &corpus, &inclusive).unwrap();
        assert_eq!(half_inc.hits, 2);
    }

    #[test]
    fn recall_top_k_window() {
        let corpus = corpus_of(&[m(0.0, 10.0)]);
        let p = [pred("s0", &[m(50.0, 60.0), m(0.0, 10.0)])];
        assert_eq!(recall_at_k(&p, &corpus, &MetricParams::new(1, 0.5).unwrap()).unwrap().hits, 0);
        assert_eq!(recall_at_k(&p, &corpus, &MetricParams::new(2, 0.5).unwrap()).unwrap().hits, 1);
    }

    #[test]
    fn missing_predictions_are_listed() {
        let corpus = corpus_of(&[m(0.0, 10.0), m(0.0, 10.0)]);
        let err = recall_at_k(&[pred("s0", &[m(0.0, 1.0)])], &corpus, &MetricParams::default()).unwrap_err();
        assert_eq!(err, MetricError::MissingPredictions(vec!["s1".into()]));
    }

    #[test]
    fn params_validation() {
        assert_eq!(MetricParams::new(0, 0.5).unwrap_err(), MetricError::ZeroK);
        assert!(MetricParams::new(1, 1.0).is_err());
    }

    #[test]
    fn nearest_neighbor_semantics() {
        let mut refs = ReferenceMap::new();
        refs.insert("s0".into(), ReferenceSet::anonymous("s0", vec![m(0.0, 5.0), m(20.0, 25.0)]).unwrap());
        let report = recall_nn(&[pred("s0", &[m(20.0, 25.0)]), pred("other", &[m(0.0, 1.0)])], &refs, &MetricParams::default());
        assert_eq!((report.hits, report.total, report.excluded), (1, 1, 1));
    }

    #[test]
    fn representative_examples() {
        let set = ReferenceSet::anonymous("s", vec![m(0.0, 10.0), m(0.0, 10.0), m(50.0, 60.0)]).unwrap();
        assert_eq!(representative_reference(&set).unwrap(), 0);
        let same = ReferenceSet::anonymous("s", vec![m(1.0, 2.0); 4]).unwrap();
        assert_eq!(representative_reference(&same).unwrap(), 0);
        let single = ReferenceSet::anonymous("s", vec![m(1.0, 2.0)]).unwrap();
        assert!(representative_reference(&single).is_err());
    }

    #[test]
    fn representative_ignores_outlier_match() {
        let mut refs = ReferenceMap::new();
        refs.insert(
            "s0".into(),
            ReferenceSet::anonymous("s0", vec![m(0.0, 10.0), m(1.0, 10.0), m(0.0, 9.0), m(60.0, 70.0)]).unwrap(),
        );
        let p = [pred("s0", &[m(60.0, 70.0)])];
        let report = recall_representative(&p, &refs, &MetricParams::default()).unwrap();
        assert_eq!(report.hits, 0);
        assert_eq!(recall_nn(&p, &refs, &MetricParams::default()).hits, 1);
    }

    #[test]
    fn human_protocols() {
        let gts = [m(0.0, 10.0), m(20.0, 40.0)];
        let corpus = corpus_of(&gts);
        let mut refs = ReferenceMap::new();
        for (i, gt) in gts.iter().enumerate() {
            let id = format!("s{i}");
            refs.insert(id.clone(), ReferenceSet::anonymous(id, vec![*gt; 5]).unwrap());
        }
        let params = MetricParams::default();
        assert_eq!(human_score_representative(&refs, &corpus, &params).unwrap().score, 100.0);
        let random = human_score_random(&refs, &corpus, &params, DEFAULT_TRIALS, 3).unwrap();
        assert_eq!((random.mean, random.std, random.trials.len()), (100.0, 0.0, 100));
        assert_eq!(human_score_random(&refs, &corpus, &params, 0, 3).unwrap_err(), MetricError::ZeroTrials);
    }

    #[test]
    fn human_representative_requires_equal_counts() {
        let corpus = corpus_of(&[m(0.0, 10.0), m(0.0, 10.0)]);
        let mut refs = ReferenceMap::new();
        refs.insert("s0".into(), ReferenceSet::anonymous("s0", vec![m(0.0, 10.0); 3]).unwrap());
        refs.insert("s1".into(), ReferenceSet::anonymous("s1", vec![m(0.0, 10.0); 2]).unwrap());
        assert!(matches!(
            human_score_representative(&refs, &corpus, &MetricParams::default()),
            Err(MetricError::UnequalReferenceCounts(..))
        ));
    }

    #[test]
    fn human_multi_reference_variants() {
        let mut refs = ReferenceMap::new();
        // representative is [0,10]; the outlier never matches it
        refs.insert(
            "s0".into(),
            ReferenceSet::anonymous("s0", vec![m(0.0, 10.0), m(0.0, 10.0), m(0.0, 10.0), m(50.0, 60.0)]).unwrap(),
        );
        let params = MetricParams::default();
        let incl = human_score_multi_reference(
            &refs,
            &params,
            HumanReference::Representative { exclude_representative: false },
            400,
            1,
        )
        .unwrap();
        let excl = human_score_multi_reference(
            &refs,
            &params,
            HumanReference::Representative { exclude_representative: true },
            400,
            1,
        )
        .unwrap();
        // hit probability 3/4 with the representative in the pool, 2/3 without
        assert!((incl.mean - 75.0).abs() < 6.0, "{}", incl.mean);
        assert!((excl.mean - 200.0 / 3.0).abs() < 6.0, "{}", excl.mean);
        let nn = human_score_multi_reference(&refs, &params, HumanReference::NearestNeighbor, 400, 1).unwrap();
        assert!((nn.mean - 75.0).abs() < 6.0, "{}", nn.mean);
    }

    #[test]
    fn buckets() {
        let corpus = corpus_of(&[m(0.0, 2.0), m(0.0, 8.0), m(0.0, 30.0), m(0.0, 50.0)]);
        let preds: Vec<_> = corpus
            .samples()
            .iter()
            .map(|s| pred(&s.sample_id, &[s.ground_truth]))
            .collect();
        let buckets = duration_bucket_report(&preds, &corpus, &MetricParams::default(), &[0.0, 5.0, 10.0, 40.0]).unwrap();
        assert_eq!(buckets.len(), 4);
        assert!(buckets.iter().all(|b| b.failure == 0));
        assert_eq!(buckets.iter().map(|b| b.success).sum::<usize>(), 4);
        assert_eq!(buckets[3].success, 1);
        assert!(duration_bucket_report(&preds, &corpus, &MetricParams::default(), &[0.0, 0.0]).is_err());
    }
}
