//! Synthetic fixtures: a verb-biased corpus whose moment locations depend on
//! the query's verb, and planted-signature feature sequences for exercising
//! the shuffle harness without real video features.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, LocationPoint, QuerySample, Split};
use crate::seed::{self, Rng};
use crate::shuffle::FeatureSequence;

struct VerbCluster {
    // frequency weight
    weight: f64,
    forms: [&'static str; 3],
    objects: [&'static str; 3],
    shape: Shape,
}

enum Shape {
    /// Start and duration drawn independently.
    Free {
        start: (f64, f64),
        duration: (f64, f64),
    },
    /// Moment ends near the end of the video.
    EndAnchored { duration: (f64, f64), gap: f64 },
}

const CLUSTERS: &[VerbCluster] = &[
    VerbCluster {
        weight: 0.15,
        forms: ["opens", "opening", "opened"],
        objects: ["door", "window", "fridge"],
        shape: Shape::Free {
            start: (0.02, 0.02),
            duration: (0.30, 0.05),
        },
    },
    VerbCluster {
        weight: 0.15,
        forms: ["leaves", "leaving", "left"],
        objects: ["room", "kitchen", "house"],
        shape: Shape::EndAnchored {
            duration: (0.25, 0.05),
            gap: 0.02,
        },
    },
    VerbCluster {
        weight: 0.30,
        forms: ["puts", "putting", "put"],
        objects: ["cup", "towel", "pillow"],
        shape: Shape::Free {
            start: (0.35, 0.08),
            duration: (0.30, 0.06),
        },
    },
    VerbCluster {
        weight: 0.15,
        forms: ["cooks", "cooking", "cooked"],
        objects: ["meal", "soup", "pasta"],
        shape: Shape::Free {
            start: (0.10, 0.05),
            duration: (0.75, 0.08),
        },
    },
    VerbCluster {
        weight: 0.10,
        forms: ["throws", "throwing", "threw"],
        objects: ["shoe", "blanket", "bottle"],
        shape: Shape::Free {
            start: (0.55, 0.10),
            duration: (0.10, 0.03),
        },
    },
    VerbCluster {
        weight: 0.15,
        forms: ["watches", "watching", "watched"],
        objects: ["television", "mirror", "screen"],
        shape: Shape::Free {
            start: (0.50, 0.10),
            duration: (0.40, 0.08),
        },
    },
];

fn draw(rng: &mut Rng, (mean, sd): (f64, f64)) -> f64 {
    Normal::new(mean, sd).expect("finite parameters").sample(rng)
}

fn draw_location(rng: &mut Rng, shape: &Shape) -> LocationPoint {
    loop {
        let (start, duration) = match shape {
            Shape::Free { start, duration } => (draw(rng, *start).max(0.0), draw(rng, *duration)),
            Shape::EndAnchored { duration, gap } => {
                let d = draw(rng, *duration);
                (1.0 - d - rng.random::<f64>() * gap, d)
            }
        };
        if duration > 0.02 {
            if let Some(p) = LocationPoint::new(start, duration) {
                return p;
            }
        }
    }
}

fn query_for(rng: &mut Rng, cluster: &VerbCluster) -> String {
    let object = cluster.objects.choose(rng).expect("non-empty");
    match rng.random_range(0..3) {
        0 => format!("a person {} the {object}", cluster.forms[0]),
        1 => format!("person is {} a {object}", cluster.forms[1]),
        _ => format!("someone {} the {object}", cluster.forms[2]),
    }
}

/// `n` samples whose moment location is determined by the query's verb.
/// Video ids are unique per sample; lengths are uniform in 20–40 s.
pub fn verb_biased_corpus(n: usize, split: Split, rng_seed: u64) -> Corpus {
    let mut rng = seed::rng(rng_seed);
    let total: f64 = CLUSTERS.iter().map(|c| c.weight).sum();
    let samples = (0..n)
        .map(|i| {
            let mut u = rng.random::<f64>() * total;
            let cluster = CLUSTERS
                .iter()
                .find(|c| {
                    u -= c.weight;
                    u < 0.0
                })
                .unwrap_or(&CLUSTERS[CLUSTERS.len() - 1]);
            let location = draw_location(&mut rng, &cluster.shape);
            let video_duration = 20.0 + 20.0 * rng.random::<f64>();
            QuerySample {
                sample_id: format!("syn-{split}-{i}"),
                video_id: format!("syn-{split}-v{i}"),
                video_duration,
                query: query_for(&mut rng, cluster),
                ground_truth: location.denormalize(video_duration),
            }
        })
        .collect();
    Corpus::new(samples, split, None).expect("synthetic ids are unique")
}

/// Train and test splits drawn from the same generator with disjoint seeds.
pub fn verb_biased_splits(n_train: usize, n_test: usize, rng_seed: u64) -> (Corpus, Corpus) {
    (
        verb_biased_corpus(n_train, Split::Train, seed::derive(rng_seed, "train")),
        verb_biased_corpus(n_test, Split::Test, seed::derive(rng_seed, "test")),
    )
}

/// Channel of [`planted_features`] that carries the signature.
pub const SIGNATURE_CHANNEL: usize = 0;

/// One feature sequence per video at `fps` frames per second. Channel
/// [`SIGNATURE_CHANNEL`] is ~1 on frames inside the sample's ground truth and
/// ~0 elsewhere; the other channels are noise.
pub fn planted_features(corpus: &Corpus, fps: f64, dim: usize, rng_seed: u64) -> BTreeMap<String, FeatureSequence> {
    assert!(dim >= 1 && fps > 0.0);
    let noise = Normal::new(0.0, 0.1).expect("valid");
    corpus
        .samples()
        .iter()
        .map(|s| {
            let mut rng = seed::rng(seed::derive(rng_seed, &s.video_id));
            let n_frames = (s.video_duration * fps).ceil().max(1.0) as usize;
            let frames = (0..n_frames)
                .map(|t| {
                    let center = (t as f64 + 0.5) / fps;
                    let inside = center >= s.ground_truth.start() && center <= s.ground_truth.end();
                    (0..dim)
                        .map(|c| {
                            let base = if c == SIGNATURE_CHANNEL && inside { 1.0 } else { 0.0 };
                            (base + noise.sample(&mut rng)) as f32
                        })
                        .collect()
                })
                .collect();
            let seq = FeatureSequence::new(s.video_id.clone(), frames).expect("non-empty uniform frames");
            (s.video_id.clone(), seq)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{verb_stats, VerbLexicon};

    #[test]
    fn corpus_is_deterministic_and_valid() {
        let a = verb_biased_corpus(200, Split::Train, 5);
        assert_eq!(a, verb_biased_corpus(200, Split::Train, 5));
        for s in a.samples() {
            assert!(s.ground_truth.end() <= s.video_duration);
        }
    }

    #[test]
    fn every_query_has_a_known_verb() {
        let corpus = verb_biased_corpus(300, Split::Train, 1);
        let stats = verb_stats(&corpus, &VerbLexicon::bundled());
        assert_eq!(stats.total, 300);
        assert_eq!(stats.counts.len(), CLUSTERS.len());
    }

    #[test]
    fn planted_channel_marks_ground_truth() {
        let corpus = verb_biased_corpus(5, Split::Test, 2);
        let feats = planted_features(&corpus, 2.0, 3, 0);
        let s = &corpus.samples()[0];
        let seq = &feats[&s.video_id];
        assert_eq!(seq.len(), (s.video_duration * 2.0).ceil() as usize);
        assert_eq!(seq.dim(), 3);
    }
}
