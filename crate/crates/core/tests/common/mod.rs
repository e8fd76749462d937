//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use moment_audit::blindtan::{self, BlindTanModel, FirstLayer};
use moment_audit::corpus::{Corpus, Moment, QuerySample, ReferenceSet, Split};
use num::{BigRational, ToPrimitive, Zero};
use rand::Rng;

pub fn exact_iou(a: &Moment, b: &Moment) -> BigRational {
    let q = |x: f64| BigRational::from_float(x).expect("finite");
    let (s1, e1, s2, e2) = (q(a.start()), q(a.end()), q(b.start()), q(b.end()));
    let lo = if s1 > s2 { s1.clone() } else { s2.clone() };
    let hi = if e1 < e2 { e1.clone() } else { e2.clone() };
    let inter = if hi > lo { hi - lo } else { BigRational::zero() };
    let union = (e1 - s1) + (e2 - s2) - inter.clone();
    if union.is_zero() {
        BigRational::zero()
    } else {
        inter / union
    }
}

/// IoU computed exactly over the rationals, rounded once at the end.
pub fn rational_iou(a: &Moment, b: &Moment) -> f64 {
    exact_iou(a, b).to_f64().expect("ratio in [0, 1]")
}

/// Brute-force representative in exact arithmetic: the reference with the
/// largest total IoU to all others, lowest index on ties.
pub fn brute_representative(refs: &[Moment]) -> usize {
    let mut best: Option<(BigRational, usize)> = None;
    for r in 0..refs.len() {
        let mut total = BigRational::zero();
        for o in 0..refs.len() {
            if o != r {
                total += exact_iou(&refs[r], &refs[o]);
            }
        }
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, r));
        }
    }
    best.expect("non-empty").1
}

pub fn random_moment(rng: &mut impl Rng, duration: f64) -> Moment {
    let a = rng.random::<f64>() * duration;
    let b = rng.random::<f64>() * duration;
    Moment::new(a.min(b), a.max(b)).unwrap()
}

/// Random corpus with `n` samples over videos of 10–60 s.
pub fn random_corpus(rng: &mut impl Rng, n: usize) -> Corpus {
    let samples = (0..n)
        .map(|i| {
            let d = 10.0 + 50.0 * rng.random::<f64>();
            QuerySample {
                sample_id: format!("r{i}"),
                video_id: format!("rv{i}"),
                video_duration: d,
                query: "a person does something".into(),
                ground_truth: random_moment(rng, d),
            }
        })
        .collect();
    Corpus::new(samples, Split::Test, None).unwrap()
}

pub fn reference_set(id: &str, refs: Vec<Moment>) -> ReferenceSet {
    ReferenceSet::anonymous(id, refs).unwrap()
}

/// Points of a uniform grid of cell midpoints over `[lo, hi]^2` and the cell
/// area.
pub fn midpoint_grid(lo: f64, hi: f64, cells: usize) -> (Vec<(f64, f64)>, f64) {
    let h = (hi - lo) / cells as f64;
    let mut pts = Vec::with_capacity(cells * cells);
    for i in 0..cells {
        for j in 0..cells {
            pts.push((lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h));
        }
    }
    (pts, h * h)
}

pub struct GradientCheck {
    /// Norm-based relative error per parameter group.
    pub errors: Vec<(String, f64)>,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a hidden ReLU.
    pub skipped: usize,
}

/// Central differences with step `eps` against the analytic gradient.
/// Coordinates whose `±eps` perturbation changes any hidden activation sign
/// are skipped: the loss is not differentiable across that interval.
pub fn gradient_check(model: &BlindTanModel, corpus: &Corpus, path: FirstLayer, eps: f64) -> GradientCheck {
    let (_, analytic) = blindtan::loss_and_gradient(model, corpus, path);
    let base_signs = blindtan::hidden_activation_signs(model, corpus);
    let mut probe = model.clone();
    let names: Vec<String> = analytic.groups().into_iter().map(|(n, _)| n).collect();
    let (mut checked, mut skipped) = (0, 0);
    let mut errors = Vec::new();
    for (g, name) in names.iter().enumerate() {
        let a = analytic.groups()[g].1;
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for (i, &a_i) in a.iter().enumerate() {
            let orig = probe.params().groups()[g].1[i];
            let mut eval = |x: f64| {
                probe.params_mut().groups_mut()[g].1[i] = x;
                let same = blindtan::hidden_activation_signs(&probe, corpus) == base_signs;
                (blindtan::loss(&probe, corpus), same)
            };
            let (up, same_up) = eval(orig + eps);
            let (down, same_down) = eval(orig - eps);
            probe.params_mut().groups_mut()[g].1[i] = orig;
            if !(same_up && same_down) {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (up - down) / (2.0 * eps);
            diff2 += (a_i - numeric).powi(2);
            a2 += a_i * a_i;
            n2 += numeric * numeric;
        }
        let scale = f64::max(a2, n2).sqrt();
        errors.push((name.clone(), if scale == 0.0 { diff2.sqrt() } else { diff2.sqrt() / scale }));
    }
    GradientCheck { errors, checked, skipped }
}
