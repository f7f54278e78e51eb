//! Temporal and spatial filtering, trial extraction and windowing.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ClassLabel, EventKind, Recording};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Overall filter order (number of poles).
    pub order: usize,
    pub fs: f64,
}

impl BandpassSpec {
    pub fn new(low_hz: f64, high_hz: f64, order: usize, fs: f64) -> Self {
        BandpassSpec { low_hz, high_hz, order, fs }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.fs / 2.0;
        if !(self.fs > 0.0) {
            return Err(Error::InvalidBand(format!("sampling rate {} must be positive", self.fs)));
        }
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < nyquist) {
            return Err(Error::InvalidBand(format!(
                "need 0 < low ({}) < high ({}) < fs/2 ({nyquist})",
                self.low_hz, self.high_hz
            )));
        }
        if ![2, 4, 6, 8].contains(&self.order) {
            return Err(Error::InvalidBand(format!("order {} not in {{2, 4, 6, 8}}", self.order)));
        }
        Ok(())
    }
}

/// One second-order section, `a0` normalized to 1:
/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }

    fn poles(&self) -> [Complex64; 2] {
        // roots of z^2 + a1 z + a2
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub sections: Vec<Biquad>,
}

impl FilterCoefficients {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn gain_db(&self, freq_hz: f64, fs: f64) -> f64 {
        20.0 * self.response(freq_hz, fs).norm().log10()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }
}

/// Butterworth band-pass via the analog low-pass prototype, LP-to-BP
/// transform on prewarped edges and the bilinear transform.
///
/// An overall order of `2k` gives `2k` poles packed into `k` biquads, each
/// with one zero at z = 1 and one at z = -1. The cascade is normalized to
/// unit gain at the geometric center frequency.
pub fn design_bandpass(spec: &BandpassSpec) -> Result<FilterCoefficients> {
    spec.validate()?;
    let fs2 = 2.0 * spec.fs;
    let proto_order = spec.order / 2;
    let w_lo = fs2 * (PI * spec.low_hz / spec.fs).tan();
    let w_hi = fs2 * (PI * spec.high_hz / spec.fs).tan();
    let w0_sq = w_lo * w_hi;
    let bw = w_hi - w_lo;

    let mut poles = Vec::with_capacity(spec.order);
    for k in 0..proto_order {
        let theta = PI * (2 * k + proto_order + 1) as f64 / (2 * proto_order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let a = p * bw / 2.0;
        let d = (a * a - w0_sq).sqrt();
        for s in [a + d, a - d] {
            poles.push((fs2 + s) / (fs2 - s));
        }
    }

    let tol = 1e-10;
    let mut upper: Vec<Complex64> = poles.iter().copied().filter(|z| z.im > tol).collect();
    let mut real: Vec<f64> = poles.iter().filter(|z| z.im.abs() <= tol).map(|z| z.re).collect();
    assert_eq!(upper.len() * 2 + real.len(), spec.order, "poles must close under conjugation");
    assert!(real.len().is_multiple_of(2), "odd number of real poles");
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.arg().total_cmp(&b.arg())));
    real.sort_by(|a, b| a.total_cmp(b));

    let mut sections: Vec<Biquad> = real
        .chunks(2)
        .map(|pair| Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1: -(pair[0] + pair[1]), a2: pair[0] * pair[1] })
        .chain(upper.iter().map(|z| Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1: -2.0 * z.re, a2: z.norm_sqr() }))
        .collect();

    let center = 2.0 * (w0_sq.sqrt() / fs2).atan();
    let z_inv = Complex64::from_polar(1.0, -center);
    for s in &mut sections {
        let g = 1.0 / s.response(z_inv).norm();
        s.b0 *= g;
        s.b2 *= g;
    }

    let coeffs = FilterCoefficients { sections };
    let all = coeffs.poles();
    assert_eq!(all.len(), spec.order);
    assert!(all.iter().all(|z| z.norm() < 1.0), "unstable design");
    Ok(coeffs)
}

/// Transposed direct-form II delay line of one biquad.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SectionState {
    z1: f64,
    z2: f64,
}

#[inline]
fn biquad_step(s: &Biquad, st: &mut SectionState, x: f64) -> f64 {
    let y = s.b0 * x + st.z1;
    st.z1 = s.b1 * x - s.a1 * y + st.z2;
    st.z2 = s.b2 * x - s.a2 * y;
    y
}

/// Forward-only cascade over a single signal, zero initial state, in place.
pub fn sosfilt_in_place(coeffs: &FilterCoefficients, signal: &mut [f64]) {
    let mut states = vec![SectionState::default(); coeffs.sections.len()];
    for v in signal.iter_mut() {
        let mut x = *v;
        for (s, st) in coeffs.sections.iter().zip(states.iter_mut()) {
            x = biquad_step(s, st, x);
        }
        *v = x;
    }
}

/// Cascade over every column of `x` from zero state, visiting rows in
/// order or in reverse. All channels advance together so their
/// recursions overlap; each column sees exactly the arithmetic of
/// [`sosfilt_in_place`].
fn cascade_columns(coeffs: &FilterCoefficients, x: &mut Array2<f64>, reverse: bool) {
    let n_ch = x.ncols();
    let mut states = vec![vec![SectionState::default(); n_ch]; coeffs.sections.len()];
    let mut step = |mut row: ndarray::ArrayViewMut1<'_, f64>| {
        let row = row.as_slice_mut().expect("standard layout");
        for (s, st) in coeffs.sections.iter().zip(states.iter_mut()) {
            for (v, st) in row.iter_mut().zip(st.iter_mut()) {
                *v = biquad_step(s, st, *v);
            }
        }
    };
    if reverse {
        x.rows_mut().into_iter().rev().for_each(&mut step);
    } else {
        x.rows_mut().into_iter().for_each(&mut step);
    }
}

/// Causal, single-pass filtering of every channel from zero state.
pub fn filter_forward(rec: &Recording, coeffs: &FilterCoefficients) -> Recording {
    let mut out = rec.samples().as_standard_layout().into_owned();
    cascade_columns(coeffs, &mut out, false);
    rec.with_samples(out)
}

/// Edge padding used by [`filter_offline`].
pub fn offline_pad_len(coeffs: &FilterCoefficients) -> usize {
    3 * (2 * coeffs.sections.len()).max(24)
}

/// Zero-phase forward-backward filtering of every channel.
///
/// Each channel is reflect-padded (mirror, edge sample not repeated) by
/// [`offline_pad_len`] samples on both ends, filtered forward, filtered
/// again in reverse time and trimmed.
pub fn filter_offline(rec: &Recording, coeffs: &FilterCoefficients) -> Recording {
    let n = rec.n_samples();
    let pad = offline_pad_len(coeffs).min(n.saturating_sub(1));
    let x = rec.samples();
    let mut ext = Array2::zeros((n + 2 * pad, rec.n_channels()));
    for (j, mut row) in ext.rows_mut().into_iter().enumerate() {
        let src = if j < pad {
            pad - j
        } else if j < pad + n {
            j - pad
        } else {
            2 * (n - 1) + pad - j
        };
        row.assign(&x.row(src));
    }
    cascade_columns(coeffs, &mut ext, false);
    cascade_columns(coeffs, &mut ext, true);
    rec.with_samples(ext.slice(ndarray::s![pad..pad + n, ..]).to_owned())
}

/// Streaming cascade with explicit per-channel state.
///
/// Feeding a recording row by row reproduces [`filter_forward`] exactly.
#[derive(Debug, Clone)]
pub struct CausalFilter {
    coeffs: FilterCoefficients,
    states: Vec<Vec<SectionState>>,
}

impl CausalFilter {
    pub fn new(coeffs: FilterCoefficients, n_channels: usize) -> Self {
        let states = vec![vec![SectionState::default(); coeffs.sections.len()]; n_channels];
        CausalFilter { coeffs, states }
    }

    pub fn n_channels(&self) -> usize {
        self.states.len()
    }

    pub fn reset(&mut self) {
        self.states.iter_mut().flatten().for_each(|s| *s = SectionState::default());
    }

    /// Filter one sample row (one value per channel).
    pub fn step(&mut self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.states.len() {
            return Err(Error::ChannelCountMismatch { expected: self.states.len(), actual: row.len() });
        }
        Ok(row
            .iter()
            .zip(self.states.iter_mut())
            .map(|(&x, states)| {
                let mut y = x;
                for (s, st) in self.coeffs.sections.iter().zip(states.iter_mut()) {
                    y = biquad_step(s, st, y);
                }
                y
            })
            .collect())
    }
}

/// Subtract the across-channel mean from one sample row.
pub fn car_row(row: &mut [f64]) {
    let mean = row.iter().sum::<f64>() / row.len() as f64;
    row.iter_mut().for_each(|v| *v -= mean);
}

/// Common average reference over every sample row.
pub fn apply_car(rec: &Recording) -> Result<Recording> {
    if rec.n_channels() < 2 {
        return Err(Error::TooFewChannels(rec.n_channels()));
    }
    let mut out = rec.samples().to_owned();
    for mut row in out.rows_mut() {
        car_row(row.as_slice_mut().expect("standard layout"));
    }
    Ok(rec.with_samples(out))
}

/// One cue's continuous-feedback segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub label: ClassLabel,
    pub run_index: usize,
    /// Sample offset of FeedbackStart in the source recording.
    pub start: usize,
    /// Sample offset of FeedbackEnd (exclusive).
    pub end: usize,
    /// `(end - start) x n_channels`.
    pub samples: Array2<f64>,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Sample spans `[FeedbackStart, FeedbackEnd)` of every cued trial, with
/// labels and run indices, without copying samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSpan {
    pub label: ClassLabel,
    pub run_index: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy)]
enum Phase {
    Idle,
    Started,
    Cued { label: ClassLabel, run: usize, at: usize },
    Feedback { label: ClassLabel, run: usize, start: usize },
}

pub fn trial_spans(rec: &Recording) -> Result<Vec<TrialSpan>> {
    let mut spans = Vec::new();
    let mut phase = Phase::Idle;
    for e in rec.events() {
        let at = e.sample_index;
        phase = match (phase, e.kind) {
            (Phase::Feedback { label, run, start }, EventKind::FeedbackEnd) => {
                if at <= start {
                    return Err(Error::OrphanMarker { sample: at, reason: "feedback ends where it starts".into() });
                }
                spans.push(TrialSpan { label, run_index: run, start, end: at });
                Phase::Idle
            }
            (Phase::Feedback { .. }, _) => return Err(Error::OverlappingTrials(at)),
            (Phase::Cued { label, run, .. }, EventKind::FeedbackStart) => Phase::Feedback { label, run, start: at },
            (Phase::Cued { at: cue_at, .. }, _) => {
                return Err(Error::OrphanMarker { sample: cue_at, reason: "cue without feedback".into() })
            }
            (Phase::Idle | Phase::Started, EventKind::TrialStart) => Phase::Started,
            (Phase::Idle | Phase::Started, kind) => match kind.cue_label() {
                Some(label) => Phase::Cued { label, run: e.run_index, at },
                None => return Err(Error::OrphanMarker { sample: at, reason: format!("{kind:?} without a cue") }),
            },
        };
    }
    match phase {
        Phase::Cued { at, .. } => Err(Error::OrphanMarker { sample: at, reason: "cue without feedback".into() }),
        Phase::Feedback { start, .. } => {
            Err(Error::OrphanMarker { sample: start, reason: "feedback never ends".into() })
        }
        _ => Ok(spans),
    }
}

pub fn extract_trials(rec: &Recording) -> Result<Vec<Trial>> {
    Ok(trial_spans(rec)?
        .into_iter()
        .map(|s| Trial {
            label: s.label,
            run_index: s.run_index,
            start: s.start,
            end: s.end,
            samples: rec.samples().slice(ndarray::s![s.start..s.end, ..]).to_owned(),
        })
        .collect())
}

/// Window length and hop in whole samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub win_len: usize,
    pub step: usize,
}

fn whole_samples(what: &str, secs: f64, fs: f64) -> Result<usize> {
    let n = secs * fs;
    let rounded = n.round();
    if !(rounded >= 1.0) || (n - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(Error::NonIntegerWindow(format!("{what} {secs} s at {fs} Hz is {n} samples")));
    }
    Ok(rounded as usize)
}

impl WindowSpec {
    pub fn from_seconds(fs: f64, win_len_s: f64, step_s: f64) -> Result<Self> {
        Ok(WindowSpec { win_len: whole_samples("window", win_len_s, fs)?, step: whole_samples("step", step_s, fs)? })
    }

    /// `1 + floor((n - win_len) / step)`, or 0 for short segments.
    pub fn count(&self, n: usize) -> usize {
        if n < self.win_len {
            0
        } else {
            1 + (n - self.win_len) / self.step
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WindowRef {
    trial: usize,
    offset: usize,
}

/// Sliding windows over a list of trials, kept as views into the trial
/// sample matrices. Windows are ordered by trial, then by time.
#[derive(Debug, Clone)]
pub struct WindowSet {
    trials: Vec<Trial>,
    spec: WindowSpec,
    n_channels: usize,
    refs: Vec<WindowRef>,
}

pub fn window_trials(trials: Vec<Trial>, n_channels: usize, spec: WindowSpec) -> Result<WindowSet> {
    let mut refs = Vec::new();
    for (t, trial) in trials.iter().enumerate() {
        if trial.samples.ncols() != n_channels {
            return Err(Error::DimensionMismatch { expected: n_channels, actual: trial.samples.ncols() });
        }
        let n = trial.samples.nrows();
        if n < spec.win_len {
            return Err(Error::TrialTooShort { trial: t, len: n, win_len: spec.win_len });
        }
        refs.extend((0..spec.count(n)).map(|w| WindowRef { trial: t, offset: w * spec.step }));
    }
    Ok(WindowSet { trials, spec, n_channels, refs })
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    /// `win_len x n_channels` view of window `i`.
    pub fn window(&self, i: usize) -> ArrayView2<'_, f64> {
        let r = self.refs[i];
        self.trials[r.trial].samples.slice(ndarray::s![r.offset..r.offset + self.spec.win_len, ..])
    }

    pub fn label(&self, i: usize) -> ClassLabel {
        self.trials[self.refs[i].trial].label
    }

    pub fn trial_index(&self, i: usize) -> usize {
        self.refs[i].trial
    }

    pub fn run_index(&self, i: usize) -> usize {
        self.trials[self.refs[i].trial].run_index
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    pub fn trial_indices(&self) -> Vec<usize> {
        self.refs.iter().map(|r| r.trial).collect()
    }

    pub fn run_indices(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.run_index(i)).collect()
    }

    /// Row length of the flattened layout.
    pub fn flat_len(&self) -> usize {
        self.spec.win_len * self.n_channels
    }

    /// Flattened channel-major: `c0 t0..tN, c1 t0..tN, ...`.
    pub fn flatten_window(&self, i: usize, out: &mut [f64]) {
        flatten_channel_major(self.window(i), out);
    }

    pub fn flatten(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), self.flat_len()));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            self.flatten_window(i, row.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

pub fn flatten_channel_major(window: ArrayView2<'_, f64>, out: &mut [f64]) {
    let win_len = window.nrows();
    assert_eq!(out.len(), window.len());
    for (c, col) in window.axis_iter(Axis(1)).enumerate() {
        out[c * win_len..(c + 1) * win_len].iter_mut().zip(col).for_each(|(o, v)| *o = *v);
    }
}
