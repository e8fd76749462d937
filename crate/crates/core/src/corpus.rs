//! Data model for query samples, moments and multi-annotator references,
//! plus loaders for the Charades-STA line format, the ActivityNet Captions
//! JSON map, and the toolkit's canonical line-delimited records.
//!
//! Loaders never reject a record only because its moment overshoots the video
//! length: the moment is clamped to `[0, duration]` and a warning is recorded
//! in [`Loaded::warnings`] (and logged).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CorpusError, Error, Result};

/// Slack allowed when checking `start + duration <= 1` on normalized points.
pub const LOCATION_EPS: f64 = 1e-9;

/// Relative overshoot of `end` past the video length that is considered
/// ordinary annotation noise; anything larger gets a louder warning.
pub const OVERSHOOT_TOLERANCE: f64 = 0.05;

/// A temporal interval `[start, end]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Moment {
    start: f64,
    end: f64,
}

impl Moment {
    pub fn new(start: f64, end: f64) -> Result<Self, CorpusError> {
        let invalid = |reason| CorpusError::InvalidMoment { start, end, reason };
        if !start.is_finite() || !end.is_finite() {
            return Err(invalid("bounds must be finite"));
        }
        if start < 0.0 || end < 0.0 {
            return Err(invalid("bounds must be non-negative"));
        }
        if start > end {
            return Err(invalid("start is after end"));
        }
        Ok(Moment { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Clamps both bounds into `[0, limit]`. Returns the clamped moment and
    /// whether anything changed.
    pub fn clamp_to(&self, limit: f64) -> (Moment, bool) {
        let start = self.start.min(limit);
        let end = self.end.min(limit);
        let changed = start != self.start || end != self.end;
        (Moment { start, end }, changed)
    }

    /// Bitwise equality of both bounds.
    pub fn bit_eq(&self, other: &Moment) -> bool {
        self.start.to_bits() == other.start.to_bits() && self.end.to_bits() == other.end.to_bits()
    }
}

impl TryFrom<[f64; 2]> for Moment {
    type Error = CorpusError;

    fn try_from([start, end]: [f64; 2]) -> Result<Self, Self::Error> {
        Moment::new(start, end)
    }
}

impl From<Moment> for [f64; 2] {
    fn from(m: Moment) -> Self {
        [m.start, m.end]
    }
}

impl fmt::Display for Moment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// A moment expressed as `(start, duration)` fractions of the video length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationPoint {
    pub start: f64,
    pub duration: f64,
}

impl LocationPoint {
    /// Validates a normalized point. Overshoots of `start + duration` past 1
    /// within [`LOCATION_EPS`] are clamped away.
    pub fn new(start: f64, duration: f64) -> Option<Self> {
        if !start.is_finite() || !duration.is_finite() {
            return None;
        }
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&duration) {
            return None;
        }
        if start + duration > 1.0 + LOCATION_EPS {
            return None;
        }
        Some(LocationPoint {
            start,
            duration: duration.min(1.0 - start),
        })
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    /// Maps back to seconds for a video of length `video_duration`.
    pub fn denormalize(&self, video_duration: f64) -> Moment {
        let start = (self.start * video_duration).clamp(0.0, video_duration);
        let end = (self.end() * video_duration).clamp(start, video_duration);
        Moment { start, end }
    }
}

/// Normalizes a moment by the video length, clamping into the unit triangle.
pub fn normalize(moment: &Moment, video_duration: f64) -> Result<LocationPoint, CorpusError> {
    if !(video_duration.is_finite() && video_duration > 0.0) {
        return Err(CorpusError::NonPositiveDuration(video_duration));
    }
    let raw_start = moment.start / video_duration;
    let raw_duration = moment.length() / video_duration;
    let start = raw_start.clamp(0.0, 1.0);
    let duration = raw_duration.clamp(0.0, 1.0).min(1.0 - start);
    if start != raw_start || duration != raw_duration {
        log::warn!("moment {moment} clamped to a {video_duration} s video");
    }
    Ok(LocationPoint { start, duration })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One (video, query, ground-truth moment) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySample {
    pub sample_id: String,
    pub video_id: String,
    pub video_duration: f64,
    pub query: String,
    pub ground_truth: Moment,
}

impl QuerySample {
    pub fn location(&self) -> LocationPoint {
        // video_duration > 0 and ground_truth clamped at construction
        normalize(&self.ground_truth, self.video_duration)
            .expect("query samples carry a positive duration")
    }
}

/// Several annotated moments for the same sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub sample_id: String,
    references: Vec<Moment>,
    annotator_ids: Vec<String>,
}

impl ReferenceSet {
    pub fn new(
        sample_id: impl Into<String>,
        references: Vec<Moment>,
        annotator_ids: Vec<String>,
    ) -> Result<Self, CorpusError> {
        let sample_id = sample_id.into();
        if references.is_empty() || references.len() != annotator_ids.len() {
            return Err(CorpusError::ReferenceLength {
                sample_id,
                moments: references.len(),
                annotators: annotator_ids.len(),
            });
        }
        Ok(ReferenceSet {
            sample_id,
            references,
            annotator_ids,
        })
    }

    /// Builds a set with generated annotator ids `a0, a1, ...`.
    pub fn anonymous(sample_id: impl Into<String>, references: Vec<Moment>) -> Result<Self, CorpusError> {
        let ids = (0..references.len()).map(|i| format!("a{i}")).collect();
        ReferenceSet::new(sample_id, references, ids)
    }

    pub fn references(&self) -> &[Moment] {
        &self.references
    }

    pub fn annotator_ids(&self) -> &[String] {
        &self.annotator_ids
    }

    pub fn len(&self) -> usize {
        self.references.len()
    }

    pub fn is_empty(&self) -> bool {
        self.references.is_empty()
    }
}

pub type ReferenceMap = BTreeMap<String, ReferenceSet>;

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    samples: Vec<QuerySample>,
    pub split: Split,
    pub reference_sets: Option<ReferenceMap>,
}

impl Corpus {
    pub fn new(
        samples: Vec<QuerySample>,
        split: Split,
        reference_sets: Option<ReferenceMap>,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(CorpusError::DuplicateSample(s.sample_id.clone()));
            }
        }
        Ok(Corpus {
            samples,
            split,
            reference_sets,
        })
    }

    pub fn samples(&self) -> &[QuerySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn by_id(&self) -> HashMap<&str, &QuerySample> {
        self.samples.iter().map(|s| (s.sample_id.as_str(), s)).collect()
    }

    pub fn locations(&self) -> Vec<LocationPoint> {
        self.samples.iter().map(QuerySample::location).collect()
    }
}

/// A loaded corpus together with the non-fatal issues found while loading.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct Warnings(Vec<String>);

impl Warnings {
    fn push(&mut self, message: String) {
        log::warn!("{message}");
        self.0.push(message);
    }
}

/// Maps video ids to their length in seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DurationTable(HashMap<String, f64>);

impl DurationTable {
    pub fn get(&self, video_id: &str) -> Option<f64> {
        self.0.get(video_id).copied()
    }

    pub fn insert(&mut self, video_id: impl Into<String>, seconds: f64) {
        self.0.insert(video_id.into(), seconds);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses `video_id,duration_seconds` rows. A leading header row is skipped.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut table = DurationTable::default();
        for (idx, row) in reader.records().enumerate() {
            let line = idx + 1;
            let row = row.map_err(|e| CorpusError::Parse {
                line,
                message: e.to_string(),
            })?;
            if row.len() != 2 {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("expected 2 fields, got {}", row.len()),
                });
            }
            let seconds: f64 = match row[1].parse() {
                Ok(v) => v,
                Err(_) if idx == 0 => continue,
                Err(_) => {
                    return Err(CorpusError::Parse {
                        line,
                        message: format!("bad duration `{}`", &row[1]),
                    })
                }
            };
            if !(seconds.is_finite() && seconds > 0.0) {
                return Err(CorpusError::Parse {
                    line,
                    message: format!("duration must be positive, got {seconds}"),
                });
            }
            table.insert(&row[0], seconds);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = read_text(path.as_ref())?;
        Ok(DurationTable::parse(&text)?)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Validates the raw bounds and clamps them into the video.
fn clamp_moment(
    start: f64,
    end: f64,
    video_duration: f64,
    context: &str,
    warnings: &mut Warnings,
) -> Result<Moment, CorpusError> {
    let raw = Moment::new(start, end)?;
    let (clamped, changed) = raw.clamp_to(video_duration);
    if changed {
        let overshoot = raw.end / video_duration - 1.0;
        if overshoot > OVERSHOOT_TOLERANCE {
            warnings.push(format!(
                "{context}: moment {raw} exceeds video length {video_duration} by {:.1}%; clamped",
                overshoot * 100.0
            ));
        } else {
            warnings.push(format!(
                "{context}: moment {raw} clamped to video length {video_duration}"
            ));
        }
    }
    Ok(clamped)
}

fn finish(samples: Vec<QuerySample>, split: Split, refs: Option<ReferenceMap>, mut warnings: Warnings) -> Result<Loaded, CorpusError> {
    if samples.is_empty() {
        warnings.push("corpus is empty".to_string());
    }
    Ok(Loaded {
        corpus: Corpus::new(samples, split, refs)?,
        warnings: warnings.0,
    })
}

/// Parses Charades-STA lines `video_id start end##sentence`.
///
/// Sample ids are `video_id#n` with `n` the zero-based record index.
pub fn parse_charades(text: &str, durations: &DurationTable, split: Split) -> Result<Loaded, CorpusError> {
    let mut warnings = Warnings::default();
    let mut samples = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let raw_line = raw_line.trim_end_matches('\r');
        if raw_line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CorpusError::Parse { line, message };
        let (head, sentence) = raw_line
            .split_once("##")
            .ok_or_else(|| parse_err("missing `##` separator".into()))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let [video_id, start, end] = fields[..] else {
            return Err(parse_err(format!(
                "expected `video_id start end`, got {} fields",
                fields.len()
            )));
        };
        let start: f64 = start
            .parse()
            .map_err(|_| parse_err(format!("bad start time `{start}`")))?;
        let end: f64 = end
            .parse()
            .map_err(|_| parse_err(format!("bad end time `{end}`")))?;
        let video_duration = durations
            .get(video_id)
            .ok_or_else(|| CorpusError::MissingDuration(video_id.to_string()))?;
        let ground_truth = clamp_moment(start, end, video_duration, &format!("line {line}"), &mut warnings)
            .map_err(|e| parse_err(e.to_string()))?;
        samples.push(QuerySample {
            sample_id: format!("{video_id}#{}", samples.len()),
            video_id: video_id.to_string(),
            video_duration,
            query: sentence.trim().to_string(),
            ground_truth,
        });
    }
    finish(samples, split, None, warnings)
}

pub fn load_charades(path: impl AsRef<Path>, durations: &DurationTable, split: Split) -> Result<Loaded> {
    let text = read_text(path.as_ref())?;
    Ok(parse_charades(&text, durations, split)?)
}

/// Parses the ActivityNet Captions `{video: {duration, timestamps, sentences}}`
/// map. Sample ids are `video#n` with `n` the caption index.
pub fn parse_activitynet(text: &str, split: Split) -> Result<Loaded, CorpusError> {
    let root: Value = serde_json::from_str(text).map_err(|e| CorpusError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let Value::Object(entries) = root else {
        return Err(CorpusError::Parse {
            line: 1,
            message: "top level must be an object keyed by video id".into(),
        });
    };
    let mut warnings = Warnings::default();
    let mut samples = Vec::new();
    for (video, entry) in &entries {
        let entry_err = |message: String| CorpusError::Entry {
            video: video.clone(),
            message,
        };
        let video_duration = entry
            .get("duration")
            .and_then(Value::as_f64)
            .ok_or_else(|| entry_err("missing numeric `duration`".into()))?;
        if !(video_duration.is_finite() && video_duration > 0.0) {
            return Err(entry_err(format!("duration must be positive, got {video_duration}")));
        }
        let timestamps = entry
            .get("timestamps")
            .and_then(Value::as_array)
            .ok_or_else(|| entry_err("missing `timestamps` list".into()))?;
        let sentences = entry
            .get("sentences")
            .and_then(Value::as_array)
            .ok_or_else(|| entry_err("missing `sentences` list".into()))?;
        if timestamps.len() != sentences.len() {
            return Err(entry_err(format!(
                "{} timestamps but {} sentences",
                timestamps.len(),
                sentences.len()
            )));
        }
        for (n, (ts, sentence)) in timestamps.iter().zip(sentences).enumerate() {
            let pair = pair_of(ts).ok_or_else(|| entry_err(format!("timestamp {n} is not a [start, end] pair")))?;
            let sentence = sentence
                .as_str()
                .ok_or_else(|| entry_err(format!("sentence {n} is not a string")))?;
            let ground_truth = clamp_moment(pair[0], pair[1], video_duration, &format!("{video}#{n}"), &mut warnings)
                .map_err(|e| entry_err(format!("timestamp {n}: {e}")))?;
            samples.push(QuerySample {
                sample_id: format!("{video}#{n}"),
                video_id: video.clone(),
                video_duration,
                query: sentence.trim().to_string(),
                ground_truth,
            });
        }
    }
    finish(samples, split, None, warnings)
}

pub fn load_activitynet(path: impl AsRef<Path>, split: Split) -> Result<Loaded> {
    let text = read_text(path.as_ref())?;
    Ok(parse_activitynet(&text, split)?)
}

fn pair_of(value: &Value) -> Option<[f64; 2]> {
    match value.as_array()?.as_slice() {
        [a, b] => Some([a.as_f64()?, b.as_f64()?]),
        _ => None,
    }
}

/// One canonical record, as parsed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanonicalRecord {
    pub sample_id: String,
    pub video_id: String,
    pub duration: f64,
    pub query: String,
    pub moments: Vec<Moment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotators: Option<Vec<String>>,
}

fn parse_record(index: usize, line: &str, warnings: &mut Warnings) -> Result<CanonicalRecord, CorpusError> {
    let schema = |field: &'static str, message: String| CorpusError::Schema { index, field, message };
    let value: Value = serde_json::from_str(line).map_err(|e| schema("<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema("<record>", "record must be an object".into()))?;
    let string_field = |field: &'static str| -> Result<String, CorpusError> {
        obj.get(field)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| schema(field, "missing or not a string".into()))
    };
    let sample_id = string_field("sample_id")?;
    let video_id = string_field("video_id")?;
    let query = string_field("query")?;
    let duration = obj
        .get("duration")
        .and_then(Value::as_f64)
        .ok_or_else(|| schema("duration", "missing or not a number".into()))?;
    if !(duration.is_finite() && duration > 0.0) {
        return Err(schema("duration", format!("must be positive, got {duration}")));
    }
    let raw_moments = obj
        .get("moments")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("moments", "missing or not a list".into()))?;
    if raw_moments.is_empty() {
        return Err(schema("moments", "must hold at least one [start, end] pair".into()));
    }
    let mut moments = Vec::with_capacity(raw_moments.len());
    for (n, m) in raw_moments.iter().enumerate() {
        let [s, e] = pair_of(m).ok_or_else(|| schema("moments", format!("entry {n} is not a [start, end] pair")))?;
        let moment = clamp_moment(s, e, duration, &format!("record {index} ({sample_id})"), warnings)
            .map_err(|err| schema("moments", format!("entry {n}: {err}")))?;
        moments.push(moment);
    }
    let annotators = match obj.get("annotators") {
        None | Some(Value::Null) => None,
        Some(Value::Array(ids)) => {
            let ids = ids
                .iter()
                .map(|v| v.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| schema("annotators", "entries must be strings".into()))?;
            if ids.len() != moments.len() {
                return Err(schema(
                    "annotators",
                    format!("{} ids for {} moments", ids.len(), moments.len()),
                ));
            }
            Some(ids)
        }
        Some(_) => return Err(schema("annotators", "must be a list".into())),
    };
    Ok(CanonicalRecord {
        sample_id,
        video_id,
        duration,
        query,
        moments,
        annotators,
    })
}

/// Parses every non-blank line of a canonical file.
pub fn parse_canonical_records(text: &str) -> Result<(Vec<CanonicalRecord>, Vec<String>), CorpusError> {
    let mut warnings = Warnings::default();
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| parse_record(i, l, &mut warnings))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((records, warnings.0))
}

/// Parses canonical records into a corpus. The first moment of each record is
/// the ground truth. Records with several moments, or with an explicit
/// `annotators` list, also yield a [`ReferenceSet`] over all their moments.
pub fn parse_canonical(text: &str, split: Split) -> Result<Loaded, CorpusError> {
    let (records, warnings) = parse_canonical_records(text)?;
    let mut samples = Vec::with_capacity(records.len());
    let mut refs = ReferenceMap::new();
    for rec in records {
        if rec.moments.len() > 1 || rec.annotators.is_some() {
            let set = match rec.annotators {
                Some(ids) => ReferenceSet::new(rec.sample_id.clone(), rec.moments.clone(), ids)?,
                None => ReferenceSet::anonymous(rec.sample_id.clone(), rec.moments.clone())?,
            };
            if refs.insert(rec.sample_id.clone(), set).is_some() {
                return Err(CorpusError::DuplicateSample(rec.sample_id));
            }
        }
        samples.push(QuerySample {
            sample_id: rec.sample_id,
            video_id: rec.video_id,
            video_duration: rec.duration,
            query: rec.query,
            ground_truth: rec.moments[0],
        });
    }
    let refs = (!refs.is_empty()).then_some(refs);
    finish(samples, split, refs, Warnings(warnings))
}

pub fn load_canonical(path: impl AsRef<Path>, split: Split) -> Result<Loaded> {
    let text = read_text(path.as_ref())?;
    Ok(parse_canonical(&text, split)?)
}

/// Reads every record of a canonical file as a reference set, including
/// records with a single moment.
pub fn parse_reference_sets(text: &str) -> Result<ReferenceMap, CorpusError> {
    let (records, _) = parse_canonical_records(text)?;
    let mut refs = ReferenceMap::new();
    for rec in records {
        let set = match rec.annotators {
            Some(ids) => ReferenceSet::new(rec.sample_id.clone(), rec.moments, ids)?,
            None => ReferenceSet::anonymous(rec.sample_id.clone(), rec.moments)?,
        };
        if refs.insert(rec.sample_id.clone(), set).is_some() {
            return Err(CorpusError::DuplicateSample(rec.sample_id));
        }
    }
    Ok(refs)
}

pub fn load_reference_sets(path: impl AsRef<Path>) -> Result<ReferenceMap> {
    let text = read_text(path.as_ref())?;
    Ok(parse_reference_sets(&text)?)
}

/// Merges per-annotation records (one moment each, as exported by an
/// annotation session) into one record per `sample_id`, in first-seen order.
/// Records of the same sample must agree on video, duration and query, and
/// either all or none may carry annotator ids.
pub fn merge_records(records: Vec<CanonicalRecord>) -> Result<Vec<CanonicalRecord>, CorpusError> {
    let mut order: Vec<CanonicalRecord> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in records {
        let Some(&at) = index.get(&rec.sample_id) else {
            index.insert(rec.sample_id.clone(), order.len());
            order.push(rec);
            continue;
        };
        let merged = &mut order[at];
        let conflict = |message: &str| CorpusError::Entry {
            video: rec.video_id.clone(),
            message: format!("sample `{}`: {message}", rec.sample_id),
        };
        if merged.video_id != rec.video_id || merged.duration != rec.duration || merged.query != rec.query {
            return Err(conflict("records disagree on video, duration or query"));
        }
        match (&mut merged.annotators, rec.annotators) {
            (Some(ids), Some(more)) => ids.extend(more),
            (None, None) => {}
            _ => return Err(conflict("some records carry annotator ids and some do not")),
        }
        merged.moments.extend(rec.moments);
    }
    Ok(order)
}

/// One JSON object per line.
pub fn records_to_canonical(records: &[CanonicalRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Serializes a corpus into canonical records, one JSON object per line.
///
/// When a sample's reference set starts with its ground truth the set is
/// written as the moments list; otherwise the ground truth is written first
/// and the references follow.
pub fn to_canonical(corpus: &Corpus) -> String {
    let mut out = String::new();
    for sample in corpus.samples() {
        let set = corpus
            .reference_sets
            .as_ref()
            .and_then(|r| r.get(&sample.sample_id));
        let (moments, annotators) = match set {
            Some(set) if set.references()[0].bit_eq(&sample.ground_truth) => {
                (set.references().to_vec(), Some(set.annotator_ids().to_vec()))
            }
            Some(set) => {
                let mut moments = vec![sample.ground_truth];
                moments.extend_from_slice(set.references());
                (moments, None)
            }
            None => (vec![sample.ground_truth], None),
        };
        let record = CanonicalRecord {
            sample_id: sample.sample_id.clone(),
            video_id: sample.video_id.clone(),
            duration: sample.video_duration,
            query: sample.query.clone(),
            moments,
            annotators,
        };
        out.push_str(&serde_json::to_string(&record).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Task manifest records (canonical fields without moments).
pub fn to_task_manifest(corpus: &Corpus) -> String {
    #[derive(Serialize)]
    struct Task<'a> {
        sample_id: &'a str,
        video_id: &'a str,
        duration: f64,
        query: &'a str,
    }
    let mut out = String::new();
    for s in corpus.samples() {
        let task = Task {
            sample_id: &s.sample_id,
            video_id: &s.video_id,
            duration: s.video_duration,
            query: &s.query,
        };
        out.push_str(&serde_json::to_string(&task).expect("tasks serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn charades_durations() -> DurationTable {
        DurationTable::parse("video_id,duration_seconds\nAO8RW,38.4\n").unwrap()
    }

    #[test]
    fn charades_line() {
        let loaded = parse_charades(
            "AO8RW 0.0 6.9##a person is putting a book on a shelf.\n",
            &charades_durations(),
            Split::Train,
        )
        .unwrap();
        let s = &loaded.corpus.samples()[0];
        assert_eq!(s.video_id, "AO8RW");
        assert_eq!(s.video_duration, 38.4);
        assert_eq!(s.ground_truth, Moment::new(0.0, 6.9).unwrap());
        assert_eq!(s.query, "a person is putting a book on a shelf.");
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn charades_rejects_reversed_moment() {
        let err = parse_charades("AO8RW 7.0 6.9##x\n", &charades_durations(), Split::Train).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn charades_reports_line_numbers() {
        let text = "AO8RW 0 1##ok\n\nAO8RW zero 1##bad\n";
        let err = parse_charades(text, &charades_durations(), Split::Train).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn charades_missing_duration_names_video() {
        let err = parse_charades("ZZZ 0 1##x\n", &charades_durations(), Split::Train).unwrap_err();
        assert_eq!(err, CorpusError::MissingDuration("ZZZ".into()));
    }

    #[test]
    fn charades_empty_file_warns() {
        let loaded = parse_charades("", &charades_durations(), Split::Test).unwrap();
        assert!(loaded.corpus.is_empty());
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn charades_clamps_overshoot() {
        let loaded = parse_charades("AO8RW 30.0 40.0##x\n", &charades_durations(), Split::Test).unwrap();
        assert_eq!(loaded.corpus.samples()[0].ground_truth.end(), 38.4);
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn activitynet_pairs() {
        let text = r#"{
            "v_a": {"duration": 120.0, "timestamps": [[0, 12], [30, 90]], "sentences": ["one", "two"]},
            "v_b": {"duration": 10.0, "timestamps": [], "sentences": []}
        }"#;
        let loaded = parse_activitynet(text, Split::Val).unwrap();
        assert_eq!(loaded.corpus.len(), 2);
        assert_eq!(loaded.corpus.samples()[1].ground_truth, Moment::new(30.0, 90.0).unwrap());
        assert_eq!(loaded.corpus.samples()[1].sample_id, "v_a#1");
    }

    #[test]
    fn activitynet_errors() {
        let reversed = r#"{"v": {"duration": 20, "timestamps": [[12, 5]], "sentences": ["x"]}}"#;
        assert!(matches!(
            parse_activitynet(reversed, Split::Val).unwrap_err(),
            CorpusError::Entry { ref video, .. } if video == "v"
        ));
        let mismatched = r#"{"v": {"duration": 20, "timestamps": [[1, 5]], "sentences": []}}"#;
        assert!(matches!(
            parse_activitynet(mismatched, Split::Val).unwrap_err(),
            CorpusError::Entry { ref video, .. } if video == "v"
        ));
    }

    #[test]
    fn canonical_reference_sets() {
        let text = concat!(
            r#"{"sample_id":"s1","video_id":"v","duration":30,"query":"q","moments":[[0,5],[1,5],[0,6],[2,7],[0,4]]}"#,
            "\n",
            r#"{"sample_id":"s2","video_id":"v","duration":30,"query":"q","moments":[[3,9]]}"#,
            "\n"
        );
        let loaded = parse_canonical(text, Split::Test).unwrap();
        let refs = loaded.corpus.reference_sets.as_ref().unwrap();
        assert_eq!(refs["s1"].len(), 5);
        assert!(!refs.contains_key("s2"));
        assert_eq!(loaded.corpus.samples()[0].ground_truth, Moment::new(0.0, 5.0).unwrap());
    }

    #[test]
    fn canonical_duplicate_and_schema_errors() {
        let rec = r#"{"sample_id":"s1","video_id":"v","duration":30,"query":"q","moments":[[0,5]]}"#;
        let dup = format!("{rec}\n{rec}\n");
        assert_eq!(
            parse_canonical(&dup, Split::Test).unwrap_err(),
            CorpusError::DuplicateSample("s1".into())
        );
        let bad = r#"{"sample_id":"s1","video_id":"v","query":"q","moments":[[0,5]]}"#;
        let err = parse_canonical(&format!("{rec}\n{bad}"), Split::Test).unwrap_err();
        assert!(matches!(err, CorpusError::Schema { index: 1, field: "duration", .. }), "{err}");
    }

    #[test]
    fn normalize_examples() {
        let full = normalize(&Moment::new(0.0, 38.4).unwrap(), 38.4).unwrap();
        assert_eq!((full.start, full.duration), (0.0, 1.0));
        let quarter = normalize(&Moment::new(9.6, 19.2).unwrap(), 38.4).unwrap();
        assert_eq!((quarter.start, quarter.duration), (0.25, 0.25));
        let over = normalize(&Moment::new(0.0, 40.0).unwrap(), 38.4).unwrap();
        assert_eq!((over.start, over.duration), (0.0, 1.0));
        assert!(normalize(&Moment::new(0.0, 1.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn normalize_matches_brute_force_clamp() {
        // Reference clamp: cut the moment to the video first, then divide.
        fn oracle(s: f64, e: f64, d: f64) -> (f64, f64) {
            let (s, e) = (s.min(d), e.min(d));
            (s / d, (e - s) / d)
        }
        for &(s, e, d) in &[(0.0, 40.0, 38.4), (30.0, 50.0, 38.4), (40.0, 41.0, 38.4), (1.0, 2.0, 3.0)] {
            let p = normalize(&Moment::new(s, e).unwrap(), d).unwrap();
            let (os, od) = oracle(s, e, d);
            assert!((p.start - os).abs() < 1e-12 && (p.duration - od).abs() < 1e-12, "{s} {e} {d}");
        }
    }

    #[test]
    fn moment_validation() {
        assert!(Moment::new(1.0, 0.5).is_err());
        assert!(Moment::new(-1.0, 0.5).is_err());
        assert!(Moment::new(0.0, f64::NAN).is_err());
        assert!(Moment::new(2.0, 2.0).is_ok());
    }

    #[test]
    fn location_point_validation() {
        assert!(LocationPoint::new(0.5, 0.5 + 1e-12).is_some());
        assert!(LocationPoint::new(0.5, 0.6).is_none());
        assert!(LocationPoint::new(-0.1, 0.1).is_none());
    }

    #[test]
    fn merge_groups_annotations_by_sample() {
        let text = concat!(
            r#"{"sample_id":"s1","video_id":"v1","duration":10.0,"query":"q","moments":[[1.0,2.0]],"annotators":["a"]}"#, "\n",
            r#"{"sample_id":"s2","video_id":"v2","duration":8.0,"query":"r","moments":[[0.0,3.0]],"annotators":["a"]}"#, "\n",
            r#"{"sample_id":"s1","video_id":"v1","duration":10.0,"query":"q","moments":[[1.5,2.5]],"annotators":["b"]}"#, "\n",
        );
        let (records, _) = parse_canonical_records(text).unwrap();
        let merged = merge_records(records.clone()).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].moments.len(), 2);
        assert_eq!(merged[0].annotators.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
        let refs = parse_reference_sets(&records_to_canonical(&merged)).unwrap();
        assert_eq!(refs["s1"].len(), 2);

        let mut bad = records;
        bad[2].query = "other".into();
        assert!(matches!(merge_records(bad), Err(CorpusError::Entry { .. })));
    }
}
