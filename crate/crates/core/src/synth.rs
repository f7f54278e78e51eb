//! Seeded synthetic motor-imagery sessions.
//!
//! Every channel carries low-pass filtered noise, a shared common-mode
//! noise term, and two ongoing rhythms (alpha and beta) whose phase is
//! redrawn at every trial start. During feedback of a Right trial the
//! rhythm amplitude on C3 is scaled by `1 - d` and on C4 by `1 + d/2`;
//! Left trials mirror this. A slow log-normal amplitude drift, independent
//! per channel, keeps single windows ambiguous.
//!
//! Randomness comes from a PCG-64 generator (`rand_pcg::Pcg64`, the
//! XSL-RR 128/64 variant) seeded with `seed_from_u64`; normal deviates use
//! the Box-Muller transform on 53-bit uniforms. All draws happen in a fixed
//! order, so a seed fully determines the output.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{save_session, ClassLabel, EventKind, EventMarker, Recording, Sensor, SessionKind, SessionMeta};

pub const DEFAULT_CHANNELS: [&str; 13] =
    ["FC3", "FC1", "C5", "C3", "C1", "Cz", "FC2", "FC4", "C2", "C4", "C6", "CP3", "CP4"];
pub const C3: usize = 3;
pub const C4: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    /// Runs of the offline session.
    pub n_runs: usize,
    /// Runs of each online session.
    pub online_runs: usize,
    pub trials_per_run: usize,
    pub fs: f64,
    pub n_channels: usize,
    /// Fractional rhythm attenuation on the contralateral channel.
    pub erd_depth: f64,
    /// Standard deviation of the per-channel background noise.
    pub noise_sigma: f64,
    /// Standard deviation of the noise shared by all channels.
    pub common_sigma: f64,
    /// Corner frequency of the background noise low-pass.
    pub noise_corner_hz: f64,
    pub rhythm_hz: f64,
    pub rhythm_amp: f64,
    pub beta_hz: f64,
    pub beta_amp: f64,
    /// Log-amplitude standard deviation of the slow drift.
    pub amplitude_jitter: f64,
    pub jitter_tau_s: f64,
    pub rest_s: f64,
    pub cue_s: f64,
    pub feedback_s: f64,
    /// Silence before the first trial and after each run.
    pub run_gap_s: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            n_runs: 4,
            online_runs: 3,
            trials_per_run: 20,
            fs: 512.0,
            n_channels: 13,
            erd_depth: 0.5,
            noise_sigma: 1.0,
            common_sigma: 0.5,
            noise_corner_hz: 2.0,
            rhythm_hz: 11.0,
            rhythm_amp: 2.0,
            beta_hz: 22.0,
            beta_amp: 1.0,
            amplitude_jitter: 0.35,
            jitter_tau_s: 1.0,
            rest_s: 2.0,
            cue_s: 1.0,
            feedback_s: 4.875,
            run_gap_s: 1.0,
        }
    }
}

fn samples_of(what: &str, secs: f64, fs: f64) -> Result<usize> {
    let n = secs * fs;
    if !(n >= 0.0) || (n - n.round()).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::BadSpec(format!("{what} of {secs} s is not a whole number of samples at {fs} Hz")));
    }
    Ok(n.round() as usize)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if self.trials_per_run == 0 || !self.trials_per_run.is_multiple_of(2) {
            return bad(format!("trials_per_run {} must be positive and even", self.trials_per_run));
        }
        if self.n_runs == 0 || self.online_runs == 0 {
            return bad("run counts must be positive".into());
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("fs {}", self.fs));
        }
        if self.n_channels <= C4 {
            return bad(format!("need at least {} channels, got {}", C4 + 1, self.n_channels));
        }
        if !(0.0..=1.0).contains(&self.erd_depth) {
            return bad(format!("erd_depth {} outside [0, 1]", self.erd_depth));
        }
        let nonneg = [self.noise_sigma, self.common_sigma, self.rhythm_amp, self.beta_amp, self.amplitude_jitter];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("amplitudes must be finite and non-negative".into());
        }
        let nyq = self.fs / 2.0;
        for f in [self.rhythm_hz, self.beta_hz, self.noise_corner_hz] {
            if !(f > 0.0 && f < nyq) {
                return bad(format!("frequency {f} Hz outside (0, {nyq})"));
            }
        }
        if !(self.jitter_tau_s > 0.0) {
            return bad("jitter_tau_s must be positive".into());
        }
        samples_of("rest", self.rest_s, self.fs)?;
        samples_of("cue", self.cue_s, self.fs)?;
        samples_of("run gap", self.run_gap_s, self.fs)?;
        if samples_of("feedback", self.feedback_s, self.fs)? == 0 {
            return bad("feedback must be non-empty".into());
        }
        Ok(())
    }

    pub fn channel_labels(&self) -> Vec<String> {
        (0..self.n_channels)
            .map(|c| DEFAULT_CHANNELS.get(c).map_or_else(|| format!("X{c}"), |s| s.to_string()))
            .collect()
    }

    /// Samples per trial phase: (rest, cue, feedback, run gap).
    fn timeline(&self) -> (usize, usize, usize, usize) {
        let s = |v: f64| (v * self.fs).round() as usize;
        (s(self.rest_s), s(self.cue_s), s(self.feedback_s), s(self.run_gap_s))
    }
}

/// Gaussian deviates via Box-Muller, caching the second value.
struct Normal {
    rng: Pcg64,
    spare: Option<f64>,
}

impl Normal {
    fn new(seed: u64) -> Self {
        Normal { rng: Pcg64::seed_from_u64(seed), spare: None }
    }

    /// Uniform on [0, 1) with 53 random bits.
    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Unit-variance AR(1) process with coefficient `a`.
struct Ar1 {
    a: f64,
    gain: f64,
    state: f64,
}

impl Ar1 {
    fn new(a: f64, start: f64) -> Self {
        Ar1 { a, gain: (1.0 - a * a).sqrt(), state: start }
    }

    fn step(&mut self, z: f64) -> f64 {
        self.state = self.a * self.state + self.gain * z;
        self.state
    }
}

/// One session as a recording plus its metadata.
pub fn generate_session(spec: &SynthSpec, kind: SessionKind) -> Result<(Recording, SessionMeta)> {
    spec.validate()?;
    let n_runs = match kind {
        SessionKind::Offline => spec.n_runs,
        SessionKind::Online1 | SessionKind::Online2 => spec.online_runs,
    };
    let n_ch = spec.n_channels;
    let fs = spec.fs;
    let (rest, cue, feedback, gap) = spec.timeline();
    let trial_len = rest + cue + feedback;
    let n_samples = gap + n_runs * (spec.trials_per_run * trial_len + gap);
    let mut rng = Normal::new(spec.seed);

    // Cue order: each consecutive pair is one Left and one Right.
    let mut cues = Vec::with_capacity(n_runs * spec.trials_per_run);
    for _ in 0..n_runs * spec.trials_per_run / 2 {
        if rng.uniform() < 0.5 {
            cues.extend([ClassLabel::Left, ClassLabel::Right]);
        } else {
            cues.extend([ClassLabel::Right, ClassLabel::Left]);
        }
    }

    let mut events = Vec::with_capacity(4 * cues.len());
    // Per-sample gain on C3 and C4 and the trial each sample belongs to.
    let mut gain = vec![[1.0f64; 2]; n_samples];
    let mut trial_starts = Vec::with_capacity(cues.len());
    let mut t = gap;
    for run in 0..n_runs {
        for k in 0..spec.trials_per_run {
            let label = cues[run * spec.trials_per_run + k];
            let cue_at = t + rest;
            let fb = cue_at + cue;
            let cue_kind = match label {
                ClassLabel::Left => EventKind::CueLeft,
                ClassLabel::Right => EventKind::CueRight,
            };
            events.push(EventMarker { sample_index: t, kind: EventKind::TrialStart, run_index: run });
            events.push(EventMarker { sample_index: cue_at, kind: cue_kind, run_index: run });
            events.push(EventMarker { sample_index: fb, kind: EventKind::FeedbackStart, run_index: run });
            events.push(EventMarker { sample_index: fb + feedback, kind: EventKind::FeedbackEnd, run_index: run });
            let (down, up) = (1.0 - spec.erd_depth, 1.0 + spec.erd_depth / 2.0);
            let g = match label {
                ClassLabel::Right => [down, up],
                ClassLabel::Left => [up, down],
            };
            gain[fb..fb + feedback].iter_mut().for_each(|v| *v = g);
            trial_starts.push(t);
            t += trial_len;
        }
        t += gap;
    }

    // Rhythm phases, redrawn at every trial start (index 0 covers the lead-in).
    let n_segments = trial_starts.len() + 1;
    // stored as (sin, cos) pairs so each sample needs one sin_cos per rhythm
    let phases: Vec<Vec<[(f64, f64); 2]>> = (0..n_segments)
        .map(|_| {
            (0..n_ch).map(|_| [(2.0 * PI * rng.uniform()).sin_cos(), (2.0 * PI * rng.uniform()).sin_cos()]).collect()
        })
        .collect();

    let a_noise = (-2.0 * PI * spec.noise_corner_hz / fs).exp();
    let a_jitter = (-1.0 / (spec.jitter_tau_s * fs)).exp();
    let mut noise: Vec<Ar1> = (0..n_ch).map(|_| Ar1::new(a_noise, rng.sample())).collect();
    let mut common = Ar1::new(a_noise, rng.sample());
    let mut drift: Vec<Ar1> = (0..n_ch).map(|_| Ar1::new(a_jitter, rng.sample())).collect();

    let (wa, wb) = (2.0 * PI * spec.rhythm_hz / fs, 2.0 * PI * spec.beta_hz / fs);
    let mut x = Array2::zeros((n_samples, n_ch));
    let mut segment = 0;
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        if segment < trial_starts.len() && i == trial_starts[segment] {
            segment += 1;
        }
        let shared = spec.common_sigma * common.step(rng.sample());
        let ti = i as f64;
        let ((sa, ca), (sb, cb)) = ((wa * ti).sin_cos(), (wb * ti).sin_cos());
        for c in 0..n_ch {
            let [(spa, cpa), (spb, cpb)] = phases[segment][c];
            let mut amp = (spec.amplitude_jitter * drift[c].step(rng.sample())).exp();
            if c == C3 {
                amp *= gain[i][0];
            } else if c == C4 {
                amp *= gain[i][1];
            }
            let rhythm = spec.rhythm_amp * (sa * cpa + ca * spa) + spec.beta_amp * (sb * cpb + cb * spb);
            row[c] = spec.noise_sigma * noise[c].step(rng.sample()) + shared + amp * rhythm;
        }
    }

    let labels = spec.channel_labels();
    let rec = Recording::new(x, fs, labels.clone(), events)?;
    let meta = SessionMeta {
        subject: format!("synthetic-{}", spec.seed),
        sensor: Sensor::Synthetic,
        session_kind: kind,
        n_runs,
        fs,
        channel_labels: labels,
    };
    Ok((rec, meta))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPaths {
    pub offline: PathBuf,
    pub online1: PathBuf,
    pub online2: PathBuf,
}

impl StudyPaths {
    pub fn under(root: &Path) -> Self {
        StudyPaths {
            offline: root.join(SessionKind::Offline.dir_name()),
            online1: root.join(SessionKind::Online1.dir_name()),
            online2: root.join(SessionKind::Online2.dir_name()),
        }
    }
}

/// The three sessions of one study, seeded `seed`, `seed + 1`, `seed + 2`.
pub fn generate_study_sessions(spec: &SynthSpec) -> Result<Vec<(Recording, SessionMeta)>> {
    spec.validate()?;
    [SessionKind::Offline, SessionKind::Online1, SessionKind::Online2]
        .par_iter()
        .enumerate()
        .map(|(i, &kind)| {
            let s = SynthSpec { seed: spec.seed.wrapping_add(i as u64), ..spec.clone() };
            generate_session(&s, kind)
        })
        .collect()
}

/// Write `offline/`, `online1/` and `online2/` under `root`.
pub fn generate_study(spec: &SynthSpec, root: &Path) -> Result<StudyPaths> {
    let sessions = generate_study_sessions(spec)?;
    let paths = StudyPaths::under(root);
    for ((rec, meta), dir) in sessions.iter().zip([&paths.offline, &paths.online1, &paths.online2]) {
        save_session(rec, meta, dir)?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::trial_spans;

    fn small() -> SynthSpec {
        SynthSpec { n_runs: 2, online_runs: 1, trials_per_run: 4, ..SynthSpec::default() }
    }

    #[test]
    fn structure() {
        let (rec, meta) = generate_session(&small(), SessionKind::Offline).unwrap();
        let spans = trial_spans(&rec).unwrap();
        assert_eq!(spans.len(), 8);
        assert!(spans.iter().all(|s| s.end - s.start == 2496));
        for run in 0..2 {
            let right = spans.iter().filter(|s| s.run_index == run && s.label == ClassLabel::Right).count();
            assert_eq!(right, 2);
        }
        assert_eq!(meta.n_runs, 2);
        assert_eq!(rec.channel_labels()[C3], "C3");
        assert_eq!(rec.channel_labels()[C4], "C4");
    }

    #[test]
    fn deterministic() {
        let a = generate_session(&small(), SessionKind::Online1).unwrap();
        let b = generate_session(&small(), SessionKind::Online1).unwrap();
        assert_eq!(a.0.fingerprint(), b.0.fingerprint());
        let c = generate_session(&SynthSpec { seed: 8, ..small() }, SessionKind::Online1).unwrap();
        assert_ne!(a.0.fingerprint(), c.0.fingerprint());
    }

    #[test]
    fn bad_specs() {
        for s in [
            SynthSpec { trials_per_run: 3, ..small() },
            SynthSpec { erd_depth: 1.5, ..small() },
            SynthSpec { feedback_s: 4.8751, ..small() },
            SynthSpec { n_channels: 5, ..small() },
        ] {
            assert!(matches!(s.validate(), Err(Error::BadSpec(_))));
        }
    }

    #[test]
    fn box_muller_moments() {
        let mut n = Normal::new(3);
        let v: Vec<f64> = (0..100_000).map(|_| n.sample()).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.02);
    }
}
