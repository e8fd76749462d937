use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Corpus(#[from] CorpusError),

    #[error(transparent)]
    Lexicon(#[from] LexiconError),

    #[error(transparent)]
    Density(#[from] DensityError),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error(transparent)]
    BlindTan(#[from] BlindTanError),

    #[error(transparent)]
    Shuffle(#[from] ShuffleError),

    #[error("format error in {what}: {message}")]
    Format { what: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("invalid moment [{start}, {end}]: {reason}")]
    InvalidMoment {
        start: f64,
        end: f64,
        reason: &'static str,
    },

    #[error("video duration must be positive, got {0}")]
    NonPositiveDuration(f64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no duration entry for video `{0}`")]
    MissingDuration(String),

    #[error("video `{video}`: {message}")]
    Entry { video: String, message: String },

    #[error("record {index}: field `{field}`: {message}")]
    Schema {
        index: usize,
        field: &'static str,
        message: String,
    },

    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),

    #[error("reference set for `{sample_id}` has {moments} moments but {annotators} annotator ids")]
    ReferenceLength {
        sample_id: String,
        moments: usize,
        annotators: usize,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("lexicon row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("lemma `{lemma}` is mapped to `{other}`; lemmas must map to themselves")]
    LemmaNotFixedPoint { lemma: String, other: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("need at least 2 support points, got {0}")]
    TooFewPoints(usize),

    #[error("support points have zero variance on both axes")]
    Degenerate,

    #[error("sampling rejected {0} consecutive draws; model is degenerate")]
    SamplingStalled(usize),

    #[error("grid resolution must be at least 2, got {0}")]
    Resolution(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("rank cutoff k must be at least 1")]
    ZeroK,

    #[error("IoU threshold must lie in [0, 1), got {0}")]
    Threshold(f64),

    #[error("missing predictions for {} samples: {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("sample `{0}` needs at least 2 references")]
    TooFewReferences(String),

    #[error("reference sets have unequal sizes ({0} and {1})")]
    UnequalReferenceCounts(usize, usize),

    #[error("sample `{0}` is not in the corpus")]
    UnknownSample(String),

    #[error("bucket edges must be strictly increasing")]
    BucketEdges,

    #[error("trials must be at least 1")]
    ZeroTrials,
}

#[derive(Debug, Error, PartialEq)]
pub enum BlindTanError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("training corpus is empty")]
    EmptyCorpus,

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ShuffleError {
    #[error("feature sequence for `{0}` has no frames")]
    Empty(String),

    #[error("feature sequence for `{video}` has frame {frame} of length {got}, expected {expected}")]
    Ragged {
        video: String,
        frame: usize,
        got: usize,
        expected: usize,
    },

    #[error("segment length must be at least 1")]
    SegmentLength,

    #[error("no features for video `{0}`")]
    MissingFeatures(String),

    #[error("need at least 2 difference pairs, got {0}")]
    TooFewDiffs(usize),
}
