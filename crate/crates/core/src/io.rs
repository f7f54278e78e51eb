//! Session data model and its on-disk representation.
//!
//! A session directory holds two files:
//!
//! * `meta.json` - subject, sensor, session kind, sampling rate, shape,
//!   channel labels, run count and the event markers.
//! * `samples.f32le` - raw little-endian binary32 samples, sample-major
//!   interleaved (`s0c0, s0c1, .., s1c0, ..`), exactly
//!   `4 * n_samples * n_channels` bytes.
//!
//! Samples are widened to `f64` on load; saving narrows them back to
//! binary32, so a recording that came from disk round-trips bit-exactly.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const SAMPLES_FILE: &str = "samples.f32le";

/// Two-class label. The numeric encoding (Left = 0, Right = 1) is fixed:
/// a positive decision score always means `Right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Left = 0,
    Right = 1,
}

impl ClassLabel {
    /// Strictly positive scores map to `Right`; zero ties to `Left`.
    pub fn from_score(score: f64) -> Self {
        if score > 0.0 {
            ClassLabel::Right
        } else {
            ClassLabel::Left
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flipped(self) -> Self {
        match self {
            ClassLabel::Left => ClassLabel::Right,
            ClassLabel::Right => ClassLabel::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    TrialStart,
    CueLeft,
    CueRight,
    FeedbackStart,
    FeedbackEnd,
}

impl EventKind {
    pub fn cue_label(self) -> Option<ClassLabel> {
        match self {
            EventKind::CueLeft => Some(ClassLabel::Left),
            EventKind::CueRight => Some(ClassLabel::Right),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "TrialStart" => EventKind::TrialStart,
            "CueLeft" => EventKind::CueLeft,
            "CueRight" => EventKind::CueRight,
            "FeedbackStart" => EventKind::FeedbackStart,
            "FeedbackEnd" => EventKind::FeedbackEnd,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventMarker {
    pub sample_index: usize,
    pub kind: EventKind,
    pub run_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sensor {
    Gel,
    Politag,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionKind {
    Offline,
    Online1,
    Online2,
}

impl SessionKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            SessionKind::Offline => "offline",
            SessionKind::Online1 => "online1",
            SessionKind::Online2 => "online2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub subject: String,
    pub sensor: Sensor,
    pub session_kind: SessionKind,
    pub n_runs: usize,
    pub fs: f64,
    pub channel_labels: Vec<String>,
}

/// Continuous multichannel recording with its event markers.
///
/// `samples` is `n_samples x n_channels`. Invariants are checked once in
/// [`Recording::new`]; the type is immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    samples: Array2<f64>,
    fs: f64,
    channel_labels: Vec<String>,
    events: Vec<EventMarker>,
}

impl Recording {
    pub fn new(samples: Array2<f64>, fs: f64, channel_labels: Vec<String>, events: Vec<EventMarker>) -> Result<Self> {
        let (n_samples, n_channels) = samples.dim();
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidRecording(format!("sampling rate {fs} must be positive")));
        }
        if n_channels == 0 {
            return Err(Error::InvalidRecording("recording has no channels".into()));
        }
        if channel_labels.len() != n_channels {
            return Err(Error::InvalidRecording(format!(
                "{} channel labels for {} channels",
                channel_labels.len(),
                n_channels
            )));
        }
        let mut seen = HashSet::new();
        for label in &channel_labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidRecording(format!("duplicate channel label {label:?}")));
            }
        }
        check_events(&events, n_samples)?;
        Ok(Recording { samples, fs, channel_labels, events })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn events(&self) -> &[EventMarker] {
        &self.events
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    /// Same markers and layout, new sample matrix of identical shape.
    pub fn with_samples(&self, samples: Array2<f64>) -> Self {
        assert_eq!(samples.dim(), self.samples.dim(), "sample matrix shape changed");
        Recording { samples, fs: self.fs, channel_labels: self.channel_labels.clone(), events: self.events.clone() }
    }

    /// Content hash over samples, rate, labels and markers.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.fs.to_le_bytes());
        h.update((self.n_samples() as u64).to_le_bytes());
        h.update((self.n_channels() as u64).to_le_bytes());
        for v in self.samples.iter() {
            h.update(v.to_le_bytes());
        }
        for label in &self.channel_labels {
            h.update(label.as_bytes());
            h.update([0u8]);
        }
        for e in &self.events {
            h.update((e.sample_index as u64).to_le_bytes());
            h.update([e.kind as u8]);
            h.update((e.run_index as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn check_events(events: &[EventMarker], n_samples: usize) -> Result<()> {
    for (i, e) in events.iter().enumerate() {
        if e.sample_index >= n_samples {
            return Err(Error::InvalidRecording(format!(
                "event {i} at sample {} is past the end ({n_samples} samples)",
                e.sample_index
            )));
        }
        if i > 0 && events[i - 1].sample_index > e.sample_index {
            return Err(Error::UnsortedEvents(i));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    subject: String,
    sensor: Sensor,
    session_kind: SessionKind,
    fs: f64,
    n_samples: usize,
    n_channels: usize,
    channel_labels: Vec<String>,
    n_runs: usize,
    events: Vec<EventMarker>,
}

pub fn load_session(dir: impl AsRef<Path>) -> Result<(Recording, SessionMeta)> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let samples_path = dir.join(SAMPLES_FILE);
    for p in [&meta_path, &samples_path] {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
    }

    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaFile = serde_json::from_str(&text).map_err(|e| Error::MalformedMeta(e.to_string()))?;
    if meta.n_channels == 0 || meta.channel_labels.len() != meta.n_channels {
        return Err(Error::MalformedMeta(format!(
            "n_channels = {} but {} channel labels",
            meta.n_channels,
            meta.channel_labels.len()
        )));
    }
    if meta.n_runs == 0 {
        return Err(Error::MalformedMeta("n_runs must be at least 1".into()));
    }
    if let Some(e) = meta.events.iter().find(|e| e.run_index >= meta.n_runs) {
        return Err(Error::MalformedMeta(format!(
            "event at sample {} references run {} of {}",
            e.sample_index, e.run_index, meta.n_runs
        )));
    }
    if let Some(i) = (1..meta.events.len()).find(|&i| meta.events[i - 1].sample_index > meta.events[i].sample_index) {
        return Err(Error::UnsortedEvents(i));
    }

    let bytes = fs::read(&samples_path).map_err(|e| Error::io(&samples_path, e))?;
    let expected = 4 * meta.n_samples as u64 * meta.n_channels as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::LengthMismatch { expected, actual: bytes.len() as u64 });
    }
    let values: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let samples = Array2::from_shape_vec((meta.n_samples, meta.n_channels), values).expect("length checked above");

    let rec = Recording::new(samples, meta.fs, meta.channel_labels.clone(), meta.events).map_err(|e| match e {
        Error::InvalidRecording(msg) => Error::MalformedMeta(msg),
        other => other,
    })?;
    let session = SessionMeta {
        subject: meta.subject,
        sensor: meta.sensor,
        session_kind: meta.session_kind,
        n_runs: meta.n_runs,
        fs: meta.fs,
        channel_labels: meta.channel_labels,
    };
    Ok((rec, session))
}

pub fn save_session(rec: &Recording, meta: &SessionMeta, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = MetaFile {
        subject: meta.subject.clone(),
        sensor: meta.sensor,
        session_kind: meta.session_kind,
        fs: rec.fs,
        n_samples: rec.n_samples(),
        n_channels: rec.n_channels(),
        channel_labels: rec.channel_labels.clone(),
        n_runs: meta.n_runs,
        events: rec.events.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("meta serializes");
    text.push('\n');
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

    let mut bytes = Vec::with_capacity(4 * rec.samples.len());
    for row in rec.samples.rows() {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let samples_path = dir.join(SAMPLES_FILE);
    fs::write(&samples_path, bytes).map_err(|e| Error::io(&samples_path, e))
}

/// Options for [`import_csv`].
#[derive(Debug, Clone)]
pub struct CsvImport {
    pub fs: f64,
    pub has_header: bool,
    /// Column holding integer event codes (name when there is a header,
    /// zero-based index otherwise). Code 0 means "no event".
    pub event_column: Option<String>,
    /// Optional column with the run index of each row.
    pub run_column: Option<String>,
    pub label_map: BTreeMap<i64, EventKind>,
}

impl CsvImport {
    pub fn new(fs: f64) -> Self {
        CsvImport { fs, has_header: true, event_column: None, run_column: None, label_map: BTreeMap::new() }
    }
}

fn resolve_column(name: &str, header: Option<&[String]>) -> Result<usize> {
    if let Some(h) = header {
        if let Some(i) = h.iter().position(|c| c == name) {
            return Ok(i);
        }
    }
    name.parse::<usize>().map_err(|_| Error::Csv(format!("no column named {name:?}")))
}

/// Read a rectangular numeric CSV (one row per sample, one column per
/// channel) into a [`Recording`].
pub fn import_csv(path: impl AsRef<Path>, opts: &CsvImport) -> Result<Recording> {
    let path = path.as_ref();
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path).map_err(
            |e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Csv(format!("{other:?}")),
            },
        )?;

    let mut records = reader.records();
    let header: Option<Vec<String>> = if opts.has_header {
        match records.next() {
            Some(r) => Some(r.map_err(|e| Error::Csv(e.to_string()))?.iter().map(String::from).collect()),
            None => None,
        }
    } else {
        None
    };

    let event_col = opts.event_column.as_deref().map(|c| resolve_column(c, header.as_deref())).transpose()?;
    let run_col = opts.run_column.as_deref().map(|c| resolve_column(c, header.as_deref())).transpose()?;

    let mut width: Option<usize> = header.as_ref().map(|h| h.len());
    let mut values = Vec::new();
    let mut events = Vec::new();
    let mut n_rows = 0usize;
    let first_data_row = usize::from(header.is_some());

    for (i, record) in records.enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let row = i + first_data_row;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows { row, expected, actual: record.len() });
        }
        let mut run_index = 0usize;
        if let Some(rc) = run_col {
            let cell = &record[rc];
            run_index = cell
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.fract() == 0.0)
                .ok_or_else(|| Error::NonNumericCell { row, column: rc, value: cell.to_string() })?
                as usize;
        }
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == event_col {
                let code = cell
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0)
                    .ok_or_else(|| Error::NonNumericCell { row, column: c, value: cell.to_string() })?
                    as i64;
                if code != 0 {
                    let kind = *opts.label_map.get(&code).ok_or(Error::UnknownEventCode { row, code })?;
                    events.push(EventMarker { sample_index: n_rows, kind, run_index });
                }
            } else if Some(c) == run_col {
                continue;
            } else {
                let v: f64 =
                    cell.parse().map_err(|_| Error::NonNumericCell { row, column: c, value: cell.to_string() })?;
                values.push(v);
            }
        }
        n_rows += 1;
    }

    let total = width.unwrap_or(0);
    let n_channels = total - usize::from(event_col.is_some()) - usize::from(run_col.is_some());
    let labels: Vec<String> = match &header {
        Some(h) => h
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != event_col && Some(*i) != run_col)
            .map(|(_, name)| name.clone())
            .collect(),
        None => (0..n_channels).map(|c| format!("ch{c}")).collect(),
    };
    let samples = Array2::from_shape_vec((n_rows, n_channels), values).map_err(|e| Error::Csv(e.to_string()))?;
    Recording::new(samples, opts.fs, labels, events)
}
