//! Segment-shuffle sanity check.
//!
//! Feature sequences are cut into consecutive blocks, the blocks are permuted,
//! and a predictor is re-run on the shuffled input. A predictor that really
//! reads the video should lose accuracy; a blind one must not change at all.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::baselines::{action_aware_predict, prior_only_predict, uniform_predict, RankedPrediction};
use crate::corpus::{Corpus, LocationPoint, Moment, QuerySample};
use crate::density::{export_density_grid_over, ConditionalPriors, DensityGrid, DensityModel};
use crate::error::{Error, Result, ShuffleError};
use crate::lexicon::VerbLexicon;
use crate::metrics::{recall_at_k, MetricParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    frames: Vec<Vec<f32>>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, frames: Vec<Vec<f32>>) -> Result<Self, ShuffleError> {
        let video_id = video_id.into();
        let Some(first) = frames.first() else {
            return Err(ShuffleError::Empty(video_id));
        };
        let expected = first.len();
        if let Some((frame, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != expected) {
            return Err(ShuffleError::Ragged {
                video: video_id,
                frame,
                got: f.len(),
                expected,
            });
        }
        Ok(FeatureSequence { video_id, frames })
    }

    pub fn frames(&self) -> &[Vec<f32>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }

    /// CSV text: a `video_id,frames,dim` header row, then one row per frame.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},{}\n", self.video_id, self.len(), self.dim());
        for f in &self.frames {
            let row: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::format("feature sequence", m);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows = reader.records();
        let header = rows.next().ok_or_else(|| bad("missing header".into()))?.map_err(|e| bad(e.to_string()))?;
        if header.len() != 3 {
            return Err(bad("header must be `video_id,frames,dim`".into()));
        }
        let video_id = header[0].to_string();
        let n: usize = header[1].parse().map_err(|_| bad(format!("bad frame count `{}`", &header[1])))?;
        let dim: usize = header[2].parse().map_err(|_| bad(format!("bad dim `{}`", &header[2])))?;
        let mut frames = Vec::with_capacity(n);
        for (i, row) in rows.enumerate() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let frame = row
                .iter()
                .map(|v| v.trim().parse::<f32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("frame {i}: non-numeric value")))?;
            if frame.len() != dim {
                return Err(bad(format!("frame {i} has {} values, header says {dim}", frame.len())));
            }
            frames.push(frame);
        }
        if frames.len() != n {
            return Err(bad(format!("header says {n} frames, found {}", frames.len())));
        }
        Ok(FeatureSequence::new(video_id, frames)?)
    }
}

/// Loads every `*.csv` feature file in a directory, keyed by video id.
pub fn load_feature_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, FeatureSequence>> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let seq = FeatureSequence::from_csv(&text)?;
        out.insert(seq.video_id.clone(), seq);
    }
    Ok(out)
}

/// Frames per segment covering one second of video.
pub fn default_segment_length(fps: f64) -> usize {
    (fps.round() as usize).max(1)
}

/// Permutes consecutive blocks of `segment_length` frames (the last block may
/// be shorter) with a uniform random permutation.
pub fn shuffle_segments(
    features: &FeatureSequence,
    segment_length: usize,
    rng_seed: u64,
) -> Result<FeatureSequence, ShuffleError> {
    if segment_length == 0 {
        return Err(ShuffleError::SegmentLength);
    }
    let blocks: Vec<&[Vec<f32>]> = features.frames.chunks(segment_length).collect();
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.shuffle(&mut seed::rng(rng_seed));
    let frames = order.into_iter().flat_map(|b| blocks[b].iter().cloned()).collect();
    Ok(FeatureSequence {
        video_id: features.video_id.clone(),
        frames,
    })
}

/// Anything that maps a sample (and optionally its features) to a ranking.
pub trait Predictor {
    fn predict(&self, sample: &QuerySample, features: Option<&FeatureSequence>, k: usize) -> Result<RankedPrediction>;

    /// Whether the predictor reads the features argument at all.
    fn uses_features(&self) -> bool {
        false
    }
}

fn truncate(mut p: RankedPrediction, k: usize) -> RankedPrediction {
    let k = k.max(1);
    p.moments.truncate(k);
    p.scores.truncate(k);
    p
}

/// Prior-Only Blind as a [`Predictor`]; per-sample seeds derive from `seed`.
pub struct PriorOnlyPredictor<'a> {
    pub priors: &'a ConditionalPriors,
    pub n_candidates: usize,
    pub seed: u64,
}

impl Predictor for PriorOnlyPredictor<'_> {
    fn predict(&self, sample: &QuerySample, _: Option<&FeatureSequence>, k: usize) -> Result<RankedPrediction> {
        let seed = seed::derive(self.seed, &sample.sample_id);
        let p = prior_only_predict(self.priors, &sample.sample_id, sample.video_duration, self.n_candidates, seed)?;
        Ok(truncate(p, k))
    }
}

pub struct ActionAwarePredictor<'a> {
    pub priors: &'a ConditionalPriors,
    pub lexicon: &'a VerbLexicon,
    pub n_candidates: usize,
    pub seed: u64,
}

impl Predictor for ActionAwarePredictor<'_> {
    fn predict(&self, sample: &QuerySample, _: Option<&FeatureSequence>, k: usize) -> Result<RankedPrediction> {
        let seed = seed::derive(self.seed, &sample.sample_id);
        let p = action_aware_predict(self.priors, self.lexicon, sample, self.n_candidates, seed)?;
        Ok(truncate(p, k))
    }
}

pub struct UniformPredictor {
    pub n_candidates: usize,
    pub seed: u64,
}

impl Predictor for UniformPredictor {
    fn predict(&self, sample: &QuerySample, _: Option<&FeatureSequence>, k: usize) -> Result<RankedPrediction> {
        let seed = seed::derive(self.seed, &sample.sample_id);
        Ok(truncate(uniform_predict(&sample.sample_id, sample.video_duration, self.n_candidates, seed), k))
    }
}

/// Toy video-dependent predictor: returns the contiguous frame window that
/// maximizes `sum(x[channel] - threshold)` (maximum-subarray search).
pub struct PlantedSignaturePredictor {
    pub fps: f64,
    pub channel: usize,
    pub threshold: f32,
}

impl Predictor for PlantedSignaturePredictor {
    fn predict(&self, sample: &QuerySample, features: Option<&FeatureSequence>, _k: usize) -> Result<RankedPrediction> {
        let features = features.ok_or_else(|| ShuffleError::MissingFeatures(sample.video_id.clone()))?;
        let mut best = (f32::NEG_INFINITY, 0, 0);
        let mut run_sum = 0.0f32;
        let mut run_start = 0;
        for (t, frame) in features.frames().iter().enumerate() {
            let v = frame[self.channel] - self.threshold;
            if run_sum <= 0.0 {
                run_sum = v;
                run_start = t;
            } else {
                run_sum += v;
            }
            if run_sum > best.0 {
                best = (run_sum, run_start, t);
            }
        }
        let d = sample.video_duration;
        let start = (best.1 as f64 / self.fps).min(d);
        let end = ((best.2 + 1) as f64 / self.fps).min(d);
        let moment = Moment::new(start, end)?;
        Ok(RankedPrediction::new(&sample.sample_id, vec![moment], vec![f64::from(best.0)]))
    }

    fn uses_features(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleDiff {
    pub sample_id: String,
    /// `|s - s'|` normalized by video length
    pub ds: f64,
    /// `|e - e'|` normalized by video length
    pub de: f64,
    pub unchanged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub score_original: f64,
    pub score_shuffled: f64,
    pub unchanged_fraction: f64,
    pub diffs: Vec<SampleDiff>,
}

impl SensitivityReport {
    pub fn score_delta(&self) -> f64 {
        self.score_original - self.score_shuffled
    }

    /// `sample_id,ds,de,unchanged`
    pub fn diffs_csv(&self) -> String {
        let mut out = String::from("sample_id,ds,de,unchanged\n");
        for d in &self.diffs {
            let _ = writeln!(out, "{},{},{},{}", d.sample_id, d.ds, d.de, u8::from(d.unchanged));
        }
        out
    }
}

/// Compares two prediction runs over the same corpus (e.g. external model
/// outputs on original and shuffled videos).
pub fn sensitivity_from_predictions(
    original: &[RankedPrediction],
    shuffled: &[RankedPrediction],
    corpus: &Corpus,
    params: &MetricParams,
) -> Result<SensitivityReport> {
    let score_original = recall_at_k(original, corpus, params)?.score;
    let score_shuffled = recall_at_k(shuffled, corpus, params)?.score;
    let orig: HashMap<&str, &RankedPrediction> = original.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let shuf: HashMap<&str, &RankedPrediction> = shuffled.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut diffs = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let id = s.sample_id.as_str();
        let (Some(a), Some(b)) = (orig[id].top(), shuf[id].top()) else {
            return Err(Error::format("predictions", format!("empty ranking for `{id}`")));
        };
        let d = s.video_duration;
        diffs.push(SampleDiff {
            sample_id: s.sample_id.clone(),
            ds: ((a.start() - b.start()).abs() / d).clamp(0.0, 1.0),
            de: ((a.end() - b.end()).abs() / d).clamp(0.0, 1.0),
            unchanged: a.bit_eq(b),
        });
    }
    let unchanged = diffs.iter().filter(|d| d.unchanged).count();
    let unchanged_fraction = if diffs.is_empty() {
        1.0
    } else {
        unchanged as f64 / diffs.len() as f64
    };
    Ok(SensitivityReport {
        score_original,
        score_shuffled,
        unchanged_fraction,
        diffs,
    })
}

/// Runs `predictor` on original and segment-shuffled features. Each video's
/// permutation seed is derived from `rng_seed` and its id.
pub fn sensitivity_test(
    predictor: &dyn Predictor,
    corpus: &Corpus,
    features: &BTreeMap<String, FeatureSequence>,
    params: &MetricParams,
    segment_length: usize,
    rng_seed: u64,
) -> Result<SensitivityReport> {
    if segment_length == 0 {
        return Err(ShuffleError::SegmentLength.into());
    }
    let mut shuffled: BTreeMap<&str, FeatureSequence> = BTreeMap::new();
    let mut original_preds = Vec::with_capacity(corpus.len());
    let mut shuffled_preds = Vec::with_capacity(corpus.len());
    for s in corpus.samples() {
        let feats = features.get(&s.video_id);
        if feats.is_none() && predictor.uses_features() {
            return Err(ShuffleError::MissingFeatures(s.video_id.clone()).into());
        }
        let shuffled_feats = match feats {
            Some(f) => {
                if !shuffled.contains_key(s.video_id.as_str()) {
                    let seed = seed::derive(rng_seed, &s.video_id);
                    shuffled.insert(s.video_id.as_str(), shuffle_segments(f, segment_length, seed)?);
                }
                shuffled.get(s.video_id.as_str())
            }
            None => None,
        };
        original_preds.push(predictor.predict(s, feats, params.k)?);
        shuffled_preds.push(predictor.predict(s, shuffled_feats, params.k)?);
    }
    sensitivity_from_predictions(&original_preds, &shuffled_preds, corpus, params)
}

/// KDE of the `(ds, de)` pairs on a grid whose cell centers run from 0 to 1
/// inclusive, so the origin is a cell center. Identical pairs (e.g. every
/// diff is zero) fall back to the floor bandwidth.
pub fn export_diff_distribution(report: &SensitivityReport, resolution: usize) -> Result<DensityGrid> {
    if report.diffs.len() < 2 {
        return Err(ShuffleError::TooFewDiffs(report.diffs.len()).into());
    }
    // plain 2D points; the (ds, de) pairs need not lie in the unit triangle
    let points: Vec<LocationPoint> = report
        .diffs
        .iter()
        .map(|d| LocationPoint {
            start: d.ds,
            duration: d.de,
        })
        .collect();
    let model = DensityModel::fit_allow_degenerate(&points)?;
    let half_cell = 0.5 / (resolution.max(2) - 1) as f64;
    Ok(export_density_grid_over(&model, resolution, -half_cell, 1.0 + half_cell)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f32]) -> FeatureSequence {
        FeatureSequence::new("v", values.iter().map(|v| vec![*v]).collect()).unwrap()
    }

    fn values(s: &FeatureSequence) -> Vec<f32> {
        s.frames().iter().map(|f| f[0]).collect()
    }

    #[test]
    fn long_segment_is_identity() {
        let s = seq(&[1.0, 2.0, 3.0]);
        assert_eq!(shuffle_segments(&s, 3, 9).unwrap(), s);
        assert_eq!(shuffle_segments(&s, 10, 9).unwrap(), s);
        assert_eq!(shuffle_segments(&s, 0, 9).unwrap_err(), ShuffleError::SegmentLength);
    }

    #[test]
    fn blocks_stay_contiguous() {
        let s = seq(&(0..10).map(|v| v as f32).collect::<Vec<_>>());
        let out = values(&shuffle_segments(&s, 3, 4).unwrap());
        // every block [0,1,2], [3,4,5], [6,7,8], [9] appears intact
        for block in [&[0.0, 1.0, 2.0][..], &[3.0, 4.0, 5.0], &[6.0, 7.0, 8.0], &[9.0]] {
            assert!(out.windows(block.len()).any(|w| w == block), "{out:?}");
        }
    }

    #[test]
    fn validation() {
        assert!(FeatureSequence::new("v", vec![]).is_err());
        assert!(matches!(
            FeatureSequence::new("v", vec![vec![1.0], vec![1.0, 2.0]]),
            Err(ShuffleError::Ragged { frame: 1, .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let s = FeatureSequence::new("vid", vec![vec![0.5, -1.25], vec![3.0, 4.0]]).unwrap();
        assert_eq!(FeatureSequence::from_csv(&s.to_csv()).unwrap(), s);
        assert!(FeatureSequence::from_csv("vid,3,2\n1,2\n").is_err());
    }

    #[test]
    fn planted_predictor_finds_block() {
        let mut vals = vec![0.0f32; 20];
        for v in &mut vals[5..9] {
            *v = 1.0;
        }
        let s = seq(&vals);
        let sample = QuerySample {
            sample_id: "x".into(),
            video_id: "v".into(),
            video_duration: 20.0,
            query: "q".into(),
            ground_truth: Moment::new(5.0, 9.0).unwrap(),
        };
        let p = PlantedSignaturePredictor {
            fps: 1.0,
            channel: 0,
            threshold: 0.5,
        };
        let out = p.predict(&sample, Some(&s), 1).unwrap();
        assert_eq!(out.moments[0], Moment::new(5.0, 9.0).unwrap());
        assert!(p.predict(&sample, None, 1).is_err());
    }
}
