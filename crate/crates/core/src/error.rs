use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the decoding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed meta: {0}")]
    MalformedMeta(String),
    #[error("sample payload is {actual} bytes, expected {expected}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("events are not sorted by sample index (event {0})")]
    UnsortedEvents(usize),
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("i/o failure on {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ragged csv row {row}: expected {expected} fields, got {actual}")]
    RaggedRows { row: usize, expected: usize, actual: usize },
    #[error("non-numeric csv cell at row {row}, column {column}: {value:?}")]
    NonNumericCell { row: usize, column: usize, value: String },
    #[error("event code {code} at row {row} has no label mapping")]
    UnknownEventCode { row: usize, code: i64 },
    #[error("csv: {0}")]
    Csv(String),

    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("row has {actual} channels, filter state has {expected}")]
    ChannelCountMismatch { expected: usize, actual: usize },
    #[error("common average reference needs at least 2 channels, got {0}")]
    TooFewChannels(usize),
    #[error("orphan marker at sample {sample}: {reason}")]
    OrphanMarker { sample: usize, reason: String },
    #[error("overlapping trials at sample {0}")]
    OverlappingTrials(usize),
    #[error("trial {trial} has {len} samples, shorter than the {win_len}-sample window")]
    TrialTooShort { trial: usize, len: usize, win_len: usize },
    #[error("window length and step must be whole sample counts: {0}")]
    NonIntegerWindow(String),

    #[error("component count {k} outside [1, {max}]")]
    BadK { k: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("window of {len} samples is shorter than segment length {nperseg}")]
    WindowTooShort { len: usize, nperseg: usize },
    #[error("invalid welch spec: {0}")]
    BadWelchSpec(String),
    #[error("need at least {needed} rows, got {actual}")]
    TooFewRows { needed: usize, actual: usize },
    #[error("svd failed to converge")]
    SvdFailure,

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("invalid evidence config: {0}")]
    BadEvidenceConfig(String),
    #[error("trial has no windows to accumulate")]
    EmptyTrial,
    #[error("session contains no trials")]
    NoTrials,
    #[error("evidence grid is empty")]
    EmptyGrid,

    #[error("run-wise cross-validation needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("sessions disagree on layout: {0}")]
    LayoutMismatch(String),
    #[error("decoder pairing broken: {0}")]
    PairingMismatch(String),
    #[error("missing session: {0}")]
    MissingSession(String),
    #[error("invalid synth spec: {0}")]
    BadSpec(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure { path: path.into(), source }
    }
}
