//! Preprocessing chain and the paired (feature transform, classifier)
//! decoder.
//!
//! A decoder is only ever applied with its own PCA transform: on disk the
//! classifier records the id of the transform it was fitted after, and
//! loading refuses any other pairing.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{Classifier, ClassifierKind, FittedClassifier, LdaOptions};
use crate::config::hash_json;
use crate::dsp::{
    apply_car, car_row, design_bandpass, extract_trials, filter_forward, filter_offline, trial_spans, window_trials,
    BandpassSpec, CausalFilter, TrialSpan, WindowSet, WindowSpec,
};
use crate::error::{Error, Result};
use crate::evidence::{TrialPredictions, WindowTiming};
use crate::features::{pca_fit, FeatureExtractor, FeatureMatrix, FeatureSpec, PcaTransform};
use crate::io::{ClassLabel, Recording};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Forward-backward filtering of the whole recording.
    ZeroPhase,
    /// Single forward pass, as a live system would see it.
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub band_order: usize,
    pub car: bool,
    pub win_len_s: f64,
    pub step_s: f64,
    pub filter_mode: FilterMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            band_low_hz: 4.0,
            band_high_hz: 30.0,
            band_order: 4,
            car: true,
            win_len_s: 1.0,
            step_s: 0.0625,
            filter_mode: FilterMode::ZeroPhase,
        }
    }
}

impl PreprocessConfig {
    pub fn bandpass(&self, fs: f64) -> BandpassSpec {
        BandpassSpec::new(self.band_low_hz, self.band_high_hz, self.band_order, fs)
    }

    pub fn window_spec(&self, fs: f64) -> Result<WindowSpec> {
        WindowSpec::from_seconds(fs, self.win_len_s, self.step_s)
    }

    pub fn timing(&self) -> WindowTiming {
        WindowTiming { win_len_s: self.win_len_s, step_s: self.step_s }
    }
}

/// Band-pass, optional CAR, trial extraction and windowing.
pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig) -> Result<WindowSet> {
    let coeffs = design_bandpass(&cfg.bandpass(rec.fs()))?;
    let spec = cfg.window_spec(rec.fs())?;
    let filtered = match cfg.filter_mode {
        FilterMode::ZeroPhase => filter_offline(rec, &coeffs),
        FilterMode::Causal => filter_forward(rec, &coeffs),
    };
    let referenced = if cfg.car { apply_car(&filtered)? } else { filtered };
    window_trials(extract_trials(&referenced)?, rec.n_channels(), spec)
}

/// Everything needed to rebuild a decoder from recordings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub preprocess: PreprocessConfig,
    pub features: FeatureSpec,
    /// PCA components kept; `None` feeds features to the classifier as is.
    pub pca_k: Option<usize>,
    pub classifier: ClassifierKind,
    pub lda: LdaOptions,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            preprocess: PreprocessConfig::default(),
            features: FeatureSpec::default(),
            pca_k: None,
            classifier: ClassifierKind::Lda,
            lda: LdaOptions::default(),
        }
    }
}

impl DecoderConfig {
    pub fn extractor(&self, fs: f64, n_channels: usize) -> Result<FeatureExtractor> {
        let spec = self.preprocess.window_spec(fs)?;
        FeatureExtractor::new(self.features, fs, spec.win_len, n_channels)
    }

    /// Preprocess `rec` and map every window to a feature row.
    pub fn features(&self, rec: &Recording) -> Result<FeatureMatrix> {
        let ws = preprocess(rec, &self.preprocess)?;
        self.extractor(rec.fs(), rec.n_channels())?.extract_all(&ws)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Fingerprints of the training recordings, in training order.
    pub sessions: Vec<String>,
    pub config_hash: String,
    /// Digest of the two fields above.
    pub id: String,
}

impl Provenance {
    pub fn new(sessions: Vec<String>, config_hash: String) -> Self {
        let mut h = Sha256::new();
        h.update(config_hash.as_bytes());
        for s in &sessions {
            h.update(b"\0");
            h.update(s.as_bytes());
        }
        let id = hex::encode(&h.finalize()[..8]);
        Provenance { sessions, config_hash, id }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub fs: f64,
    pub channel_labels: Vec<String>,
    pub feature_dim: usize,
    pub pca: Option<PcaTransform>,
    pub classifier: FittedClassifier,
    pub provenance: Provenance,
}

pub const DECODER_JSON: &str = "decoder.json";

#[derive(Debug, Serialize, Deserialize)]
struct DecoderFile {
    config: DecoderConfig,
    fs: f64,
    channel_labels: Vec<String>,
    feature_dim: usize,
    pca_id: Option<String>,
    provenance: Provenance,
}

fn check_layout(fs: f64, labels: &[String], rec: &Recording) -> Result<()> {
    if rec.fs() != fs {
        return Err(Error::LayoutMismatch(format!("sampling rate {} Hz, expected {fs} Hz", rec.fs())));
    }
    if rec.channel_labels() != labels {
        return Err(Error::LayoutMismatch(format!("channels {:?}, expected {:?}", rec.channel_labels(), labels)));
    }
    Ok(())
}

/// Fit the feature transform on the union of all sessions' windows and the
/// classifier on the transformed rows.
pub fn train_decoder(sessions: &[&Recording], config: &DecoderConfig) -> Result<Decoder> {
    let first = sessions.first().ok_or(Error::NoTrials)?;
    for rec in &sessions[1..] {
        check_layout(first.fs(), first.channel_labels(), rec)?;
    }
    let parts = sessions.iter().map(|r| config.features(r)).collect::<Result<Vec<_>>>()?;
    let parts: Vec<&FeatureMatrix> = parts.iter().collect();
    train_on_features(sessions, &parts, config)
}

/// [`train_decoder`] with the feature rows of each session precomputed by
/// [`DecoderConfig::features`].
pub(crate) fn train_on_features(
    sessions: &[&Recording],
    parts: &[&FeatureMatrix],
    config: &DecoderConfig,
) -> Result<Decoder> {
    let first = sessions.first().ok_or(Error::NoTrials)?;
    let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.data.view()).collect();
    let x = concatenate(Axis(0), &views).expect("equal feature widths");
    let y: Vec<ClassLabel> = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
    if y.is_empty() {
        return Err(Error::NoTrials);
    }
    let (pca, z) = fit_transform(x, config.pca_k)?;
    let classifier = FittedClassifier::fit(config.classifier, z.view(), &y, config.lda)?;
    Ok(Decoder {
        config: *config,
        fs: first.fs(),
        channel_labels: first.channel_labels().to_vec(),
        feature_dim: views[0].ncols(),
        pca,
        classifier,
        provenance: Provenance::new(sessions.iter().map(|r| r.fingerprint()).collect(), hash_json(config)),
    })
}

/// Fit PCA (rounded to its stored precision) and project, or pass through.
pub(crate) fn fit_transform(x: Array2<f64>, k: Option<usize>) -> Result<(Option<PcaTransform>, Array2<f64>)> {
    match k {
        None => Ok((None, x)),
        Some(k) => {
            let mut pca = pca_fit(x.view(), k)?;
            pca.quantize_components();
            let z = pca.transform(x.view())?;
            Ok((Some(pca), z))
        }
    }
}

impl Decoder {
    pub fn timing(&self) -> WindowTiming {
        self.config.preprocess.timing()
    }

    pub fn k(&self) -> Option<usize> {
        self.pca.as_ref().map(PcaTransform::k)
    }

    /// Same decoder, applied with another filtering mode.
    pub fn with_filter_mode(&self, mode: FilterMode) -> Decoder {
        let mut d = self.clone();
        d.config.preprocess.filter_mode = mode;
        d
    }

    pub fn check_session(&self, rec: &Recording) -> Result<()> {
        check_layout(self.fs, &self.channel_labels, rec)
    }

    fn extractor(&self) -> Result<FeatureExtractor> {
        let ex = self.config.extractor(self.fs, self.channel_labels.len())?;
        if ex.dim() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, actual: ex.dim() });
        }
        Ok(ex)
    }

    fn predict_with(&self, ex: &FeatureExtractor, window: ArrayView2<'_, f64>) -> Result<ClassLabel> {
        let mut feat = vec![0.0; ex.dim()];
        ex.extract(window, &mut feat)?;
        Ok(self.predict_features(&feat))
    }

    fn predict_features(&self, feat: &[f64]) -> ClassLabel {
        let score = match &self.pca {
            None => self.classifier.score_row(feat),
            Some(pca) => {
                let mut centered = vec![0.0; pca.dim()];
                let mut z = vec![0.0; pca.k()];
                pca.transform_row(feat, &mut centered, &mut z);
                self.classifier.score_row(&z)
            }
        };
        ClassLabel::from_score(score)
    }

    /// Predict one `win_len x n_channels` window.
    pub fn predict_window(&self, window: ArrayView2<'_, f64>) -> Result<ClassLabel> {
        self.predict_with(&self.extractor()?, window)
    }

    pub fn predict_windows(&self, ws: &WindowSet) -> Result<Vec<ClassLabel>> {
        let fm = self.extractor()?.extract_all(ws)?;
        Ok(self.predict_rows(&fm))
    }

    /// Predictions for feature rows produced with this decoder's settings.
    pub(crate) fn predict_rows(&self, fm: &FeatureMatrix) -> Vec<ClassLabel> {
        (0..fm.n_rows())
            .into_par_iter()
            .map(|i| self.predict_features(fm.data.row(i).as_slice().expect("standard layout")))
            .collect()
    }

    /// Preprocess `rec` with this decoder's settings.
    pub fn windows(&self, rec: &Recording) -> Result<WindowSet> {
        self.check_session(rec)?;
        let ws = preprocess(rec, &self.config.preprocess)?;
        if ws.trials().is_empty() {
            return Err(Error::NoTrials);
        }
        Ok(ws)
    }

    /// Window predictions grouped per trial, in temporal order.
    pub fn trial_predictions(&self, rec: &Recording) -> Result<Vec<TrialPredictions>> {
        let ws = self.windows(rec)?;
        let preds = self.predict_windows(&ws)?;
        let mut out: Vec<TrialPredictions> = ws
            .trials()
            .iter()
            .map(|t| TrialPredictions { label: t.label, run_index: t.run_index, predictions: Vec::new() })
            .collect();
        for (i, p) in preds.into_iter().enumerate() {
            out[ws.trial_index(i)].predictions.push(p);
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let pca_id = self.pca.as_ref().map(PcaTransform::id);
        if let Some(pca) = &self.pca {
            pca.save(dir)?;
        }
        self.classifier.save(dir, pca_id.as_deref())?;
        let file = DecoderFile {
            config: self.config,
            fs: self.fs,
            channel_labels: self.channel_labels.clone(),
            feature_dim: self.feature_dim,
            pca_id,
            provenance: self.provenance.clone(),
        };
        let path = dir.join(DECODER_JSON);
        fs::write(&path, serde_json::to_string_pretty(&file).expect("decoder serializes") + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Decoder> {
        let path = dir.join(DECODER_JSON);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: DecoderFile = serde_json::from_str(&text).map_err(|e| Error::MalformedMeta(e.to_string()))?;
        let pca = match &file.pca_id {
            Some(id) => {
                let pca = PcaTransform::load(dir)?;
                if &pca.id() != id {
                    return Err(Error::PairingMismatch(format!("decoder expects pca {id}, found {}", pca.id())));
                }
                Some(pca)
            }
            None => None,
        };
        let (classifier, clf_pca) = FittedClassifier::load(dir)?;
        if clf_pca != file.pca_id {
            return Err(Error::PairingMismatch(format!(
                "classifier was fitted after pca {clf_pca:?}, decoder carries {:?}",
                file.pca_id
            )));
        }
        let expected = pca.as_ref().map_or(file.feature_dim, PcaTransform::k);
        if pca.as_ref().is_some_and(|p| p.dim() != file.feature_dim) || classifier.dim() != expected {
            return Err(Error::DimensionMismatch { expected, actual: classifier.dim() });
        }
        Ok(Decoder {
            config: file.config,
            fs: file.fs,
            channel_labels: file.channel_labels,
            feature_dim: file.feature_dim,
            pca,
            classifier,
            provenance: file.provenance,
        })
    }
}

/// One window produced by [`WindowStream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamWindow {
    pub trial_index: usize,
    /// Position of the window within its trial.
    pub window_index: usize,
    pub label: ClassLabel,
    pub run_index: usize,
    pub prediction: ClassLabel,
}

/// Sample-by-sample causal decoding: each row is filtered with
/// [`CausalFilter`], re-referenced, and appended to the current trial's
/// buffer; a window is classified as soon as it is complete.
pub struct WindowStream<'a> {
    decoder: &'a Decoder,
    rec: &'a Recording,
    extractor: FeatureExtractor,
    filter: CausalFilter,
    spans: Vec<TrialSpan>,
    spec: WindowSpec,
    next_row: usize,
    cursor: usize,
    buf: Vec<f64>,
    emitted: usize,
}

impl<'a> WindowStream<'a> {
    pub fn new(decoder: &'a Decoder, rec: &'a Recording) -> Result<Self> {
        decoder.check_session(rec)?;
        let pre = &decoder.config.preprocess;
        let coeffs = design_bandpass(&pre.bandpass(rec.fs()))?;
        let spec = pre.window_spec(rec.fs())?;
        if pre.car && rec.n_channels() < 2 {
            return Err(Error::TooFewChannels(rec.n_channels()));
        }
        let spans = trial_spans(rec)?;
        if spans.is_empty() {
            return Err(Error::NoTrials);
        }
        if let Some((t, s)) = spans.iter().enumerate().find(|(_, s)| s.end - s.start < spec.win_len) {
            return Err(Error::TrialTooShort { trial: t, len: s.end - s.start, win_len: spec.win_len });
        }
        Ok(WindowStream {
            decoder,
            rec,
            extractor: decoder.extractor()?,
            filter: CausalFilter::new(coeffs, rec.n_channels()),
            spans,
            spec,
            next_row: 0,
            cursor: 0,
            buf: Vec::new(),
            emitted: 0,
        })
    }

    pub fn next_window(&mut self) -> Result<Option<StreamWindow>> {
        let n_ch = self.rec.n_channels();
        while self.next_row < self.rec.n_samples() && self.cursor < self.spans.len() {
            let t = self.next_row;
            self.next_row += 1;
            let raw = self.rec.samples().row(t);
            let mut row = self.filter.step(raw.as_slice().expect("standard layout"))?;
            if self.decoder.config.preprocess.car {
                car_row(&mut row);
            }
            let span = self.spans[self.cursor];
            if t < span.start {
                continue;
            }
            self.buf.extend_from_slice(&row);
            let len = self.buf.len() / n_ch;
            let mut out = None;
            if len >= self.spec.win_len && (len - self.spec.win_len).is_multiple_of(self.spec.step) {
                let off = (len - self.spec.win_len) * n_ch;
                let window = ArrayView2::from_shape((self.spec.win_len, n_ch), &self.buf[off..])
                    .expect("buffer holds whole rows");
                out = Some(StreamWindow {
                    trial_index: self.cursor,
                    window_index: self.emitted,
                    label: span.label,
                    run_index: span.run_index,
                    prediction: self.decoder.predict_with(&self.extractor, window)?,
                });
                self.emitted += 1;
            }
            if t + 1 == span.end {
                self.cursor += 1;
                self.buf.clear();
                self.emitted = 0;
            }
            if out.is_some() {
                return Ok(out);
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{EventKind, EventMarker};
    use ndarray::Array2;

    fn toy_session(seed: u64) -> Recording {
        // 4 channels, 8 trials; Right trials carry a 10 Hz burst on ch 0
        let fs = 128.0;
        let trial = 256;
        let gap = 64;
        let n = 8 * (trial + gap) + gap;
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut noise = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut x = Array2::zeros((n, 4));
        let mut events = Vec::new();
        for k in 0..8 {
            let start = gap + k * (trial + gap);
            let right = k % 2 == 1;
            events.push(EventMarker {
                sample_index: start - 10,
                kind: if right { EventKind::CueRight } else { EventKind::CueLeft },
                run_index: k / 4,
            });
            events.push(EventMarker { sample_index: start, kind: EventKind::FeedbackStart, run_index: k / 4 });
            events.push(EventMarker { sample_index: start + trial, kind: EventKind::FeedbackEnd, run_index: k / 4 });
            for t in start..start + trial {
                let s = (2.0 * std::f64::consts::PI * 10.0 * t as f64 / fs).sin();
                x[[t, 0]] = if right { 3.0 * s } else { 0.0 };
                x[[t, 1]] = if right { 0.0 } else { 3.0 * s };
            }
        }
        x.mapv_inplace(|v| v + noise());
        let labels = (0..4).map(|c| format!("c{c}")).collect();
        Recording::new(x, fs, labels, events).unwrap()
    }

    fn config() -> DecoderConfig {
        let mut cfg = DecoderConfig::default();
        cfg.preprocess.win_len_s = 1.0;
        cfg.preprocess.step_s = 0.25;
        cfg.features.welch.nperseg = 64;
        cfg.features.welch.noverlap = 32;
        cfg
    }

    #[test]
    fn trains_and_separates() {
        let rec = toy_session(1);
        let dec = train_decoder(&[&rec], &config()).unwrap();
        let trials = dec.trial_predictions(&rec).unwrap();
        assert_eq!(trials.len(), 8);
        assert!(trials.iter().all(|t| t.predictions.len() == 5));
        let correct =
            trials.iter().flat_map(|t| t.predictions.iter().map(move |p| *p == t.label)).filter(|c| *c).count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn save_load_roundtrip_with_pca() {
        let rec = toy_session(2);
        let mut cfg = config();
        cfg.pca_k = Some(6);
        let dec = train_decoder(&[&rec], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        dec.save(dir.path()).unwrap();
        let back = Decoder::load(dir.path()).unwrap();
        assert_eq!(back, dec);
    }

    #[test]
    fn swapped_pca_is_refused() {
        let rec = toy_session(3);
        let mut cfg = config();
        cfg.pca_k = Some(6);
        let a = train_decoder(&[&rec], &cfg).unwrap();
        let b = train_decoder(&[&toy_session(4)], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        b.pca.as_ref().unwrap().save(dir.path()).unwrap();
        assert!(matches!(Decoder::load(dir.path()), Err(Error::PairingMismatch(_))));
    }

    #[test]
    fn stream_matches_causal_batch() {
        let rec = toy_session(5);
        let dec = train_decoder(&[&rec], &config()).unwrap().with_filter_mode(FilterMode::Causal);
        let batch = dec.trial_predictions(&rec).unwrap();
        let mut stream = WindowStream::new(&dec, &rec).unwrap();
        let mut seen: Vec<Vec<ClassLabel>> = vec![Vec::new(); batch.len()];
        while let Some(w) = stream.next_window().unwrap() {
            assert_eq!(w.window_index, seen[w.trial_index].len());
            seen[w.trial_index].push(w.prediction);
        }
        for (b, s) in batch.iter().zip(&seen) {
            assert_eq!(&b.predictions, s);
        }
    }

    #[test]
    fn layout_mismatch() {
        let rec = toy_session(6);
        let other = Recording::new(
            rec.samples().clone(),
            rec.fs(),
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            rec.events().to_vec(),
        )
        .unwrap();
        assert!(matches!(train_decoder(&[&rec, &other], &config()), Err(Error::LayoutMismatch(_))));
    }
}
