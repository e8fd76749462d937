mod common;

use moment_audit::baselines::{uniform_predict, RankedPrediction};
use moment_audit::corpus::{parse_activitynet, parse_charades, DurationTable, LocationPoint, Moment, Split};
use moment_audit::density::{export_density_grid, DensityModel, BANDWIDTH_FLOOR};
use moment_audit::metrics::{duration_bucket_report, MetricParams};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Continuous, Normal};
use statrs::statistics::Statistics;

const CHARADES: &str = include_str!("fixtures/charades_sample.txt");
const DURATIONS: &str = include_str!("fixtures/charades_durations.csv");
const ACTIVITYNET: &str = include_str!("fixtures/activitynet_sample.json");

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<LocationPoint> {
    let mut out = Vec::new();
    while out.len() < n {
        let s: f64 = rng.random_range(0.0..0.6);
        let d: f64 = rng.random_range(0.05..0.4);
        out.extend(LocationPoint::new(s, d));
    }
    out
}

#[test]
fn scott_bandwidth_matches_sample_std() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [2, 7, 50, 400] {
        let points = cloud(&mut rng, n);
        let model = DensityModel::fit(&points).unwrap();
        let factor = (n as f64).powf(-1.0 / 6.0);
        let sd_s = points.iter().map(|p| p.start).std_dev();
        let sd_d = points.iter().map(|p| p.duration).std_dev();
        let [hs, hd] = model.bandwidth();
        assert!((hs - (sd_s * factor).max(BANDWIDTH_FLOOR)).abs() < 1e-12, "n={n}");
        assert!((hd - (sd_d * factor).max(BANDWIDTH_FLOOR)).abs() < 1e-12, "n={n}");
    }
}

#[test]
fn pdf_matches_mixture_of_normals() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points = cloud(&mut rng, 60);
    let model = DensityModel::fit(&points).unwrap();
    let [hs, hd] = model.bandwidth();
    for _ in 0..200 {
        let (s, d): (f64, f64) = (rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2));
        let expected: f64 = points
            .iter()
            .map(|p| Normal::new(p.start, hs).unwrap().pdf(s) * Normal::new(p.duration, hd).unwrap().pdf(d))
            .sum::<f64>()
            / points.len() as f64;
        let got = model.pdf_at(s, d);
        assert!((got - expected).abs() <= 1e-10 * expected.max(1e-300) + 1e-300, "{got} vs {expected}");
    }
}

#[test]
fn degenerate_fit_floors_both_bandwidths() {
    let p = LocationPoint::new(0.2, 0.3).unwrap();
    assert!(DensityModel::fit(&[p, p, p]).is_err());
    let model = DensityModel::fit_allow_degenerate(&[p, p, p]).unwrap();
    assert_eq!(model.bandwidth(), [BANDWIDTH_FLOOR, BANDWIDTH_FLOOR]);
}

#[test]
fn grid_mass_matches_brute_midpoint_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = DensityModel::fit(&cloud(&mut rng, 40)).unwrap();
    let grid = export_density_grid(&model, 40).unwrap();
    let (centers, area) = common::midpoint_grid(0.0, 1.0, 40);
    let brute: f64 = centers.iter().map(|&(s, d)| model.pdf_at(s, d)).sum::<f64>() * area;
    assert!((grid.mass() - brute).abs() < 1e-9);
    let back = moment_audit::density::DensityGrid::from_csv(&grid.to_csv()).unwrap();
    assert_eq!(back.resolution, 40);
    assert!((back.mass() - grid.mass()).abs() < 1e-9);
}

// Under uniform sampling on {s + d <= 1}, P(s <= x) = 1 - (1 - x)^2, and the
// same holds for d.
#[test]
fn uniform_candidates_pass_chi_square_on_both_marginals() {
    let pred = uniform_predict("x", 1.0, 20_000, 11);
    let bins = 10;
    let expected: Vec<f64> = (0..bins)
        .map(|i| {
            let (a, b) = (i as f64 / bins as f64, (i + 1) as f64 / bins as f64);
            ((1.0 - a).powi(2) - (1.0 - b).powi(2)) * pred.moments.len() as f64
        })
        .collect();
    let chi2 = ChiSquared::new((bins - 1) as f64).unwrap();
    for axis in [|m: &Moment| m.start(), |m: &Moment| m.length()] {
        let mut counts = vec![0.0; bins];
        for m in &pred.moments {
            counts[((axis(m) * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let stat: f64 = counts.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
        let p = 1.0 - chi2.cdf(stat);
        assert!(p > 1e-3, "chi2 {stat}, p {p}");
    }
    assert!(pred.moments.iter().all(|m| m.end() <= 1.0));
}

#[test]
fn charades_fixture_matches_independent_parse() {
    let durations = DurationTable::parse(DURATIONS).unwrap();
    let loaded = parse_charades(CHARADES, &durations, Split::Test).unwrap();
    let lines: Vec<&str> = CHARADES.lines().filter(|l| l.contains("##")).collect();
    assert_eq!(loaded.corpus.len(), lines.len());
    for (s, line) in loaded.corpus.samples().iter().zip(&lines) {
        let (head, query) = line.split_once("##").unwrap();
        let fields: Vec<&str> = head.split_whitespace().collect();
        assert_eq!(s.video_id, fields[0]);
        assert_eq!(s.query, query.trim());
        assert_eq!(s.ground_truth.start(), fields[1].parse::<f64>().unwrap());
        let end: f64 = fields[2].parse().unwrap();
        assert_eq!(s.ground_truth.end(), end.min(s.video_duration));
    }
    assert_eq!(loaded.corpus.samples()[0].video_duration, 38.4);
}

#[test]
fn activitynet_fixture_matches_independent_parse() {
    let loaded = parse_activitynet(ACTIVITYNET, Split::Test).unwrap();
    let raw: serde_json::Value = serde_json::from_str(ACTIVITYNET).unwrap();
    let pairs: usize = raw
        .as_object()
        .unwrap()
        .values()
        .map(|v| v["sentences"].as_array().unwrap().len())
        .sum();
    assert_eq!(loaded.corpus.len(), pairs);
    for s in loaded.corpus.samples() {
        let entry = &raw[&s.video_id];
        assert_eq!(s.video_duration, entry["duration"].as_f64().unwrap());
        let idx = entry["sentences"]
            .as_array()
            .unwrap()
            .iter()
            .position(|q| q.as_str().unwrap().trim() == s.query)
            .unwrap();
        let ts = &entry["timestamps"][idx];
        assert_eq!(s.ground_truth.start(), ts[0].as_f64().unwrap());
        assert_eq!(s.ground_truth.end(), ts[1].as_f64().unwrap());
    }
}

#[test]
fn duration_buckets_match_brute_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let corpus = common::random_corpus(&mut rng, 300);
    let preds: Vec<RankedPrediction> = corpus
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| uniform_predict(&s.sample_id, s.video_duration, 5, i as u64))
        .collect();
    let params = MetricParams::new(5, 0.3).unwrap();
    let edges = [0.0, 5.0, 10.0, 20.0];
    let buckets = duration_bucket_report(&preds, &corpus, &params, &edges).unwrap();
    assert_eq!(buckets.len(), edges.len());
    for (b, bucket) in buckets.iter().enumerate() {
        let (mut hit, mut miss) = (0, 0);
        for (s, p) in corpus.samples().iter().zip(&preds) {
            let len = s.ground_truth.length();
            let in_bucket = match bucket.range {
                Some((lo, hi)) => lo <= len && len < hi,
                None => len >= 20.0,
            };
            if !in_bucket {
                continue;
            }
            if p.moments.iter().any(|m| common::exact_iou(m, &s.ground_truth) > num::BigRational::new(3.into(), 10.into())) {
                hit += 1;
            } else {
                miss += 1;
            }
        }
        assert_eq!((bucket.success, bucket.failure), (hit, miss), "bucket {b}");
    }
    assert_eq!(buckets.iter().map(|b| b.success + b.failure).sum::<usize>(), corpus.len());
}
