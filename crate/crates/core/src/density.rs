//! Gaussian product-kernel density estimates over normalized
//! `(start, duration)` locations.
//!
//! The density lives on the whole plane. Validity (`start + duration <= 1`,
//! both non-negative) is only enforced when sampling, by rejection.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::corpus::{Corpus, LocationPoint};
use crate::error::{DensityError, Error, Result};
use crate::lexicon::{verb_stats, VerbLexicon};
use crate::seed;

/// Lower bound on either per-axis bandwidth.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

/// Consecutive rejected draws after which sampling gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

pub const DEFAULT_MIN_SAMPLES: usize = 10;
pub const DEFAULT_TOP_K: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    support: Vec<LocationPoint>,
    bandwidth: [f64; 2],
    // cached kernel constants
    inv_two_var: [f64; 2],
    norm: f64,
}

fn sample_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> f64 {
    // the rounded mean of identical values need not equal them
    let mut it = values.clone();
    if let Some(first) = it.next() {
        if it.all(|v| v == first) {
            return 0.0;
        }
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean).powi(2)).sum();
    (ss / (n as f64 - 1.0)).sqrt()
}

impl DensityModel {
    /// Fits with per-axis Scott bandwidths `sigma * n^(-1/6)`, floored at
    /// [`BANDWIDTH_FLOOR`]. Fails on fewer than two points or when both axes
    /// have zero variance.
    pub fn fit(points: &[LocationPoint]) -> Result<Self, DensityError> {
        Self::fit_inner(points, false)
    }

    /// Like [`fit`](Self::fit) but accepts zero variance on both axes, in
    /// which case both bandwidths sit at the floor.
    pub fn fit_allow_degenerate(points: &[LocationPoint]) -> Result<Self, DensityError> {
        Self::fit_inner(points, true)
    }

    fn fit_inner(points: &[LocationPoint], allow_degenerate: bool) -> Result<Self, DensityError> {
        let n = points.len();
        if n < 2 {
            return Err(DensityError::TooFewPoints(n));
        }
        let sd_start = sample_std(points.iter().map(|p| p.start), n);
        let sd_duration = sample_std(points.iter().map(|p| p.duration), n);
        if sd_start == 0.0 && sd_duration == 0.0 && !allow_degenerate {
            return Err(DensityError::Degenerate);
        }
        let factor = (n as f64).powf(-1.0 / 6.0);
        let bandwidth = [
            (sd_start * factor).max(BANDWIDTH_FLOOR),
            (sd_duration * factor).max(BANDWIDTH_FLOOR),
        ];
        Ok(Self::with_bandwidth(points.to_vec(), bandwidth))
    }

    /// Builds a model with an explicit bandwidth.
    pub fn with_bandwidth(support: Vec<LocationPoint>, bandwidth: [f64; 2]) -> Self {
        assert!(support.len() >= 2, "density needs at least 2 support points");
        assert!(bandwidth.iter().all(|h| *h > 0.0 && h.is_finite()), "bandwidth must be positive");
        let inv_two_var = [0.5 / (bandwidth[0] * bandwidth[0]), 0.5 / (bandwidth[1] * bandwidth[1])];
        let norm = 1.0 / (2.0 * PI * bandwidth[0] * bandwidth[1] * support.len() as f64);
        DensityModel {
            support,
            bandwidth,
            inv_two_var,
            norm,
        }
    }

    pub fn support(&self) -> &[LocationPoint] {
        &self.support
    }

    pub fn bandwidth(&self) -> [f64; 2] {
        self.bandwidth
    }

    /// Density at an arbitrary `(start, duration)` coordinate.
    pub fn pdf_at(&self, start: f64, duration: f64) -> f64 {
        let [a, b] = self.inv_two_var;
        let sum: f64 = self
            .support
            .iter()
            .map(|p| {
                let ds = start - p.start;
                let dd = duration - p.duration;
                (-(a * ds * ds + b * dd * dd)).exp()
            })
            .sum();
        sum * self.norm
    }

    pub fn pdf(&self, at: &LocationPoint) -> f64 {
        self.pdf_at(at.start, at.duration)
    }

    /// Draws `n` valid locations: pick a support point uniformly, jitter each
    /// axis by its bandwidth, and redraw until the result is a valid point.
    pub fn sample(&self, n: usize, rng_seed: u64) -> Result<Vec<LocationPoint>, DensityError> {
        let mut rng = seed::rng(rng_seed);
        let mut out = Vec::with_capacity(n);
        let mut rejected = 0;
        while out.len() < n {
            let p = &self.support[rng.random_range(0..self.support.len())];
            let zs: f64 = rng.sample(StandardNormal);
            let zd: f64 = rng.sample(StandardNormal);
            match LocationPoint::new(p.start + zs * self.bandwidth[0], p.duration + zd * self.bandwidth[1]) {
                Some(point) => {
                    out.push(point);
                    rejected = 0;
                }
                None => {
                    rejected += 1;
                    if rejected > MAX_CONSECUTIVE_REJECTIONS {
                        return Err(DensityError::SamplingStalled(rejected));
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn fit(points: &[LocationPoint]) -> Result<DensityModel, DensityError> {
    DensityModel::fit(points)
}

/// Global and per-verb location priors fit on a training split.
#[derive(Debug, Clone)]
pub struct ConditionalPriors {
    pub global: DensityModel,
    pub per_verb: BTreeMap<String, DensityModel>,
    pub min_samples: usize,
    /// Verbs in the top-k that were skipped, with the reason.
    pub dropped: Vec<(String, String)>,
}

impl ConditionalPriors {
    /// The conditional model for `verb`, if one was fit.
    pub fn for_verb(&self, verb: &str) -> Option<&DensityModel> {
        self.per_verb.get(verb)
    }
}

pub fn fit_conditional(
    corpus: &Corpus,
    lexicon: &VerbLexicon,
    top_k: usize,
    min_samples: usize,
) -> Result<ConditionalPriors> {
    let global = DensityModel::fit(&corpus.locations())?;
    let stats = verb_stats(corpus, lexicon);
    let mut by_verb: BTreeMap<String, Vec<LocationPoint>> = BTreeMap::new();
    for s in corpus.samples() {
        if let Some(verb) = lexicon.extract_first_verb(&s.query) {
            by_verb.entry(verb).or_default().push(s.location());
        }
    }
    let mut per_verb = BTreeMap::new();
    let mut dropped = Vec::new();
    for verb in stats.top_k(top_k) {
        let points = &by_verb[&verb];
        if points.len() < min_samples {
            dropped.push((verb, format!("{} samples < {min_samples}", points.len())));
            continue;
        }
        match DensityModel::fit(points) {
            Ok(model) => {
                per_verb.insert(verb, model);
            }
            Err(e) => {
                log::warn!("dropping conditional prior for `{verb}`: {e}");
                dropped.push((verb, e.to_string()));
            }
        }
    }
    Ok(ConditionalPriors {
        global,
        per_verb,
        min_samples,
        dropped,
    })
}

/// Pdf values at cell centers of a square grid, row-major with rows along
/// the start axis and columns along the duration axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityGrid {
    pub resolution: usize,
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn cell_size(&self) -> f64 {
        (self.hi - self.lo) / self.resolution as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size().powi(2)
    }

    pub fn center(&self, index: usize) -> f64 {
        self.lo + (index as f64 + 0.5) * self.cell_size()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    /// Midpoint-rule integral over the grid.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    /// Header `row,col,start,duration,pdf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,start,duration,pdf\n");
        for row in 0..self.resolution {
            for col in 0..self.resolution {
                let _ = writeln!(
                    out,
                    "{row},{col},{},{},{}",
                    self.center(row),
                    self.center(col),
                    self.value(row, col)
                );
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::format("density grid", e))?;
        if headers != vec!["row", "col", "start", "duration", "pdf"] {
            return Err(Error::format("density grid", "unexpected header"));
        }
        let mut cells = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::format("density grid", e))?;
            let parse = |i: usize| -> Result<f64> {
                row[i].parse().map_err(|_| Error::format("density grid", format!("bad number `{}`", &row[i])))
            };
            cells.push((parse(0)? as usize, parse(1)? as usize, parse(2)?, parse(4)?));
        }
        let resolution = (cells.len() as f64).sqrt() as usize;
        if resolution < 2 || resolution * resolution != cells.len() {
            return Err(Error::format("density grid", "cell count is not a square >= 4"));
        }
        let mut values = vec![0.0; cells.len()];
        let mut first_center = f64::NAN;
        for &(r, c, start, pdf) in &cells {
            if r >= resolution || c >= resolution {
                return Err(Error::format("density grid", "cell index out of range"));
            }
            if r == 0 {
                first_center = start;
            }
            values[r * resolution + c] = pdf;
        }
        let last_center = cells
            .iter()
            .find(|c| c.0 == resolution - 1)
            .map(|c| c.2)
            .unwrap_or(f64::NAN);
        let cell = (last_center - first_center) / (resolution - 1) as f64;
        Ok(DensityGrid {
            resolution,
            lo: first_center - cell / 2.0,
            hi: last_center + cell / 2.0,
            values,
        })
    }
}

/// Grid over `[0, 1]^2`.
pub fn export_density_grid(model: &DensityModel, resolution: usize) -> Result<DensityGrid, DensityError> {
    export_density_grid_over(model, resolution, 0.0, 1.0)
}

/// Grid over `[lo, hi]^2`.
pub fn export_density_grid_over(
    model: &DensityModel,
    resolution: usize,
    lo: f64,
    hi: f64,
) -> Result<DensityGrid, DensityError> {
    if resolution < 2 {
        return Err(DensityError::Resolution(resolution));
    }
    let mut grid = DensityGrid {
        resolution,
        lo,
        hi,
        values: Vec::with_capacity(resolution * resolution),
    };
    for row in 0..resolution {
        let start = grid.center(row);
        for col in 0..resolution {
            grid.values.push(model.pdf_at(start, grid.center(col)));
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(s: f64, d: f64) -> LocationPoint {
        LocationPoint::new(s, d).unwrap()
    }

    #[test]
    fn zero_variance_axis_uses_floor() {
        let mut pts = vec![lp(0.0, 0.2); 9];
        pts.push(lp(0.5, 0.2));
        let model = fit(&pts).unwrap();
        // sample std of nine 0s and one 0.5 is 0.5 * sqrt(0.1 * 0.9 * 10 / 9)
        let sd = 0.5 * (0.1f64 * 0.9 * 10.0 / 9.0).sqrt();
        let expected = sd * 10f64.powf(-1.0 / 6.0);
        assert!((model.bandwidth()[0] - expected).abs() < 1e-15);
        assert_eq!(model.bandwidth()[1], BANDWIDTH_FLOOR);
    }

    #[test]
    fn fit_preconditions() {
        assert_eq!(fit(&[lp(0.1, 0.1)]).unwrap_err(), DensityError::TooFewPoints(1));
        assert_eq!(fit(&[lp(0.1, 0.1), lp(0.1, 0.1)]).unwrap_err(), DensityError::Degenerate);
        let m = DensityModel::fit_allow_degenerate(&[lp(0.1, 0.1), lp(0.1, 0.1)]).unwrap();
        assert_eq!(m.bandwidth(), [BANDWIDTH_FLOOR; 2]);
    }

    #[test]
    fn tail_is_negligible() {
        let model = fit(&[lp(0.2, 0.2), lp(0.25, 0.3), lp(0.3, 0.25)]).unwrap();
        let h = model.bandwidth();
        let v = model.pdf_at(0.3 + 11.0 * h[0], 0.3 + 11.0 * h[1]);
        assert!(v < 1e-12, "{v}");
    }

    #[test]
    fn grid_has_resolution_squared_cells() {
        let model = fit(&[lp(0.2, 0.2), lp(0.4, 0.3)]).unwrap();
        let grid = export_density_grid(&model, 2).unwrap();
        assert_eq!(grid.values.len(), 4);
        assert!(export_density_grid(&model, 1).is_err());
    }

    #[test]
    fn grid_csv_round_trip() {
        let model = fit(&[lp(0.2, 0.2), lp(0.4, 0.3), lp(0.1, 0.5)]).unwrap();
        let grid = export_density_grid(&model, 7).unwrap();
        let parsed = DensityGrid::from_csv(&grid.to_csv()).unwrap();
        assert_eq!(parsed.resolution, 7);
        assert_eq!(parsed.values, grid.values);
        assert!((parsed.lo - 0.0).abs() < 1e-12 && (parsed.hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_stalls_on_invalid_support() {
        // mass sits far outside the valid triangle
        let model = DensityModel::with_bandwidth(vec![lp(1.0, 0.0), lp(1.0, 0.0)], [1e-3, 1e-3]);
        let far = DensityModel {
            support: vec![LocationPoint { start: 5.0, duration: 5.0 }; 2],
            ..model
        };
        assert!(matches!(far.sample(1, 0), Err(DensityError::SamplingStalled(_))));
    }
}
