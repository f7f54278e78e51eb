//! Trial-level decisions by evidence accumulation.
//!
//! The evidence value starts at 0 for every trial and moves by `+delta`
//! for each window predicted `Right` and `-delta` for each `Left`. The
//! first time `|EV| > theta` (strictly) the trial is decided by the sign;
//! if every window is consumed without crossing, the trial times out.
//!
//! EV is kept as an integer net step count, so `EV_i = net_i * delta`
//! exactly as far as the comparison is concerned: a crossing needs
//! `|net| * delta > theta * (1 + 1e-9)`. The relative slack makes exact
//! grid hits (`theta = 0.3`, `delta = 0.1`, three steps) count as "not
//! greater", which is what the arithmetic on the real numbers says.

use std::io::Write;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, WindowStream};
use crate::error::{Error, Result};
use crate::io::{ClassLabel, Recording};

const CROSSING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceConfig {
    pub theta: f64,
    pub delta: f64,
}

impl EvidenceConfig {
    pub fn new(theta: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= theta && theta <= 1.0) {
            return Err(Error::BadEvidenceConfig(format!("need 0 < delta ({delta}) <= theta ({theta}) <= 1")));
        }
        Ok(EvidenceConfig { theta, delta })
    }

    fn crossed(&self, net: i64) -> bool {
        net.unsigned_abs() as f64 * self.delta > self.theta * (1.0 + CROSSING_SLACK)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Left,
    Right,
    Timeout,
}

impl From<ClassLabel> for Decision {
    fn from(l: ClassLabel) -> Self {
        match l {
            ClassLabel::Left => Decision::Left,
            ClassLabel::Right => Decision::Right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceOutcome {
    pub decision: Decision,
    /// Windows consumed, including the deciding one.
    pub stop_index: usize,
    /// EV after each consumed window.
    pub trajectory: Vec<f64>,
}

/// Incremental form of [`accumulate`], one window at a time.
#[derive(Debug, Clone)]
pub struct Accumulator {
    cfg: EvidenceConfig,
    net: i64,
    consumed: usize,
    decision: Option<Decision>,
}

impl Accumulator {
    pub fn new(cfg: EvidenceConfig) -> Self {
        Accumulator { cfg, net: 0, consumed: 0, decision: None }
    }

    pub fn ev(&self) -> f64 {
        self.net as f64 * self.cfg.delta
    }

    pub fn consumed(&self) -> usize {
        self.consumed
    }

    pub fn decision(&self) -> Option<Decision> {
        self.decision
    }

    /// Feed one prediction; returns the decision once the threshold is
    /// crossed. Predictions after a decision are ignored.
    pub fn push(&mut self, prediction: ClassLabel) -> Option<Decision> {
        if self.decision.is_some() {
            return self.decision;
        }
        self.net += match prediction {
            ClassLabel::Right => 1,
            ClassLabel::Left => -1,
        };
        self.consumed += 1;
        if self.cfg.crossed(self.net) {
            self.decision = Some(if self.net > 0 { Decision::Right } else { Decision::Left });
        }
        self.decision
    }
}

pub fn accumulate(predictions: &[ClassLabel], cfg: EvidenceConfig) -> Result<EvidenceOutcome> {
    if predictions.is_empty() {
        return Err(Error::EmptyTrial);
    }
    let mut acc = Accumulator::new(cfg);
    let mut trajectory = Vec::with_capacity(predictions.len());
    for &p in predictions {
        let decided = acc.push(p);
        trajectory.push(acc.ev());
        if decided.is_some() {
            break;
        }
    }
    Ok(EvidenceOutcome {
        decision: acc.decision().unwrap_or(Decision::Timeout),
        stop_index: acc.consumed(),
        trajectory,
    })
}

/// Per-window predictions of one trial, in temporal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPredictions {
    pub label: ClassLabel,
    pub run_index: usize,
    pub predictions: Vec<ClassLabel>,
}

/// Window geometry in seconds, for latency reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowTiming {
    pub win_len_s: f64,
    pub step_s: f64,
}

impl WindowTiming {
    /// Seconds from feedback onset to the end of window `stop_index`.
    pub fn latency_s(&self, stop_index: usize) -> f64 {
        self.win_len_s + (stop_index.saturating_sub(1)) as f64 * self.step_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_index: usize,
    pub run_index: usize,
    pub label: ClassLabel,
    pub decision: Decision,
    pub stop_index: usize,
    pub n_windows: usize,
    pub final_ev: f64,
}

impl TrialOutcome {
    pub fn correct(&self) -> bool {
        self.decision == Decision::from(self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub n_trials: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub timeout: usize,
    pub correct_pct: f64,
    pub incorrect_pct: f64,
    pub timeout_pct: f64,
    /// Mean over decided (non-timeout) trials; `None` when all time out.
    pub mean_latency_windows: Option<f64>,
    pub mean_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub config: EvidenceConfig,
    pub timing: WindowTiming,
    pub summary: TrialSummary,
    pub trials: Vec<TrialOutcome>,
}

fn summarize(outcomes: &[TrialOutcome], timing: WindowTiming) -> TrialSummary {
    let n = outcomes.len();
    let timeout = outcomes.iter().filter(|o| o.decision == Decision::Timeout).count();
    let correct = outcomes.iter().filter(|o| o.correct()).count();
    let incorrect = n - correct - timeout;
    let decided: Vec<usize> =
        outcomes.iter().filter(|o| o.decision != Decision::Timeout).map(|o| o.stop_index).collect();
    let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
    let (mean_w, mean_s) = if decided.is_empty() {
        (None, None)
    } else {
        let m = decided.iter().sum::<usize>() as f64 / decided.len() as f64;
        let s = decided.iter().map(|&k| timing.latency_s(k)).sum::<f64>() / decided.len() as f64;
        (Some(m), Some(s))
    };
    TrialSummary {
        n_trials: n,
        correct,
        incorrect,
        timeout,
        correct_pct: pct(correct),
        incorrect_pct: pct(incorrect),
        timeout_pct: pct(timeout),
        mean_latency_windows: mean_w,
        mean_latency_s: mean_s,
    }
}

/// Run the accumulator over every trial and aggregate.
pub fn evaluate_trials(trials: &[TrialPredictions], cfg: EvidenceConfig, timing: WindowTiming) -> Result<TrialReport> {
    if trials.is_empty() {
        return Err(Error::NoTrials);
    }
    let outcomes = trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let o = accumulate(&t.predictions, cfg)?;
            Ok(TrialOutcome {
                trial_index: i,
                run_index: t.run_index,
                label: t.label,
                decision: o.decision,
                stop_index: o.stop_index,
                n_windows: t.predictions.len(),
                final_ev: *o.trajectory.last().expect("non-empty"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialReport { config: cfg, timing, summary: summarize(&outcomes, timing), trials: outcomes })
}

/// Decode every trial of `session` and accumulate evidence.
pub fn replay_session(decoder: &Decoder, session: &Recording, cfg: EvidenceConfig) -> Result<TrialReport> {
    let trials = decoder.trial_predictions(session)?;
    evaluate_trials(&trials, cfg, decoder.timing())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[derive(Default)]
pub enum Objective {
    /// Max correct, then min incorrect, then min timeout.
    #[default]
    Lexicographic,
    /// Max `correct% - alpha * incorrect% - beta * timeout%`.
    Weighted { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub theta: f64,
    pub delta: f64,
    pub summary: TrialSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub objective: Objective,
    pub thetas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub winner: EvidenceConfig,
    pub winner_summary: TrialSummary,
    /// Row-major over (theta, delta).
    pub cells: Vec<GridCell>,
}

/// `theta` in {0.1, .., 1.0}.
pub fn default_thetas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// `delta` in {0.01, .., 0.10}.
pub fn default_deltas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

fn better(objective: Objective, a: &GridCell, b: &GridCell) -> bool {
    use std::cmp::Ordering::*;
    let primary = match objective {
        Objective::Lexicographic => {
            let (sa, sb) = (&a.summary, &b.summary);
            sb.correct.cmp(&sa.correct).then(sa.incorrect.cmp(&sb.incorrect)).then(sa.timeout.cmp(&sb.timeout))
        }
        Objective::Weighted { alpha, beta } => {
            let f = |s: &TrialSummary| s.correct_pct - alpha * s.incorrect_pct - beta * s.timeout_pct;
            f(&b.summary).total_cmp(&f(&a.summary))
        }
    };
    let ord = primary.then(a.theta.total_cmp(&b.theta)).then(a.delta.total_cmp(&b.delta));
    ord == Less
}

/// Exhaustive (theta, delta) search over pre-computed window predictions.
pub fn grid_search_predictions(
    trials: &[TrialPredictions],
    thetas: &[f64],
    deltas: &[f64],
    objective: Objective,
    timing: WindowTiming,
) -> Result<GridSearch> {
    if thetas.is_empty() || deltas.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if trials.is_empty() {
        return Err(Error::NoTrials);
    }
    let configs = thetas
        .iter()
        .flat_map(|&t| deltas.iter().map(move |&d| EvidenceConfig::new(t, d)))
        .collect::<Result<Vec<_>>>()?;
    let cells = configs
        .par_iter()
        .map(|&cfg| {
            evaluate_trials(trials, cfg, timing).map(|r| GridCell {
                theta: cfg.theta,
                delta: cfg.delta,
                summary: r.summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = cells.iter().skip(1).fold(&cells[0], |best, c| if better(objective, c, best) { c } else { best });
    Ok(GridSearch {
        objective,
        thetas: thetas.to_vec(),
        deltas: deltas.to_vec(),
        winner: EvidenceConfig { theta: best.theta, delta: best.delta },
        winner_summary: best.summary.clone(),
        cells,
    })
}

pub fn grid_search(
    decoder: &Decoder,
    session: &Recording,
    thetas: &[f64],
    deltas: &[f64],
    objective: Objective,
) -> Result<GridSearch> {
    if thetas.is_empty() || deltas.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let trials = decoder.trial_predictions(session)?;
    grid_search_predictions(&trials, thetas, deltas, objective, decoder.timing())
}

impl GridSearch {
    /// Rows theta, columns delta, cells `correct/incorrect/timeout` in
    /// percent with one decimal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta\\delta");
        for d in &self.deltas {
            out.push_str(&format!(",{d}"));
        }
        out.push('\n');
        for (i, t) in self.thetas.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for j in 0..self.deltas.len() {
                let s = &self.cells[i * self.deltas.len() + j].summary;
                out.push_str(&format!(",{:.1}/{:.1}/{:.1}", s.correct_pct, s.incorrect_pct, s.timeout_pct));
            }
            out.push('\n');
        }
        out
    }
}

/// Running state reported after every consumed window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamState {
    Accumulating,
    Decided(Decision),
    /// Windows after a decision within the same trial.
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub trial_index: usize,
    pub window_index: usize,
    pub prediction: ClassLabel,
    pub ev: f64,
    pub state: StreamState,
}

/// Causal replay: samples are filtered, re-referenced and windowed one row
/// at a time, and an event is emitted for every window consumed by the
/// accumulator. With `realtime` the loop sleeps one window step between
/// events. Returns the same report as [`replay_session`] on a decoder set
/// to causal filtering.
pub fn stream_replay(
    decoder: &Decoder,
    session: &Recording,
    cfg: EvidenceConfig,
    realtime: bool,
    mut on_event: impl FnMut(&StreamEvent),
) -> Result<TrialReport> {
    let timing = decoder.timing();
    let mut stream = WindowStream::new(decoder, session)?;
    let mut outcomes = Vec::new();
    let mut current: Option<(usize, Accumulator, ClassLabel, usize, usize)> = None;

    let finish = |cur: Option<(usize, Accumulator, ClassLabel, usize, usize)>, outcomes: &mut Vec<TrialOutcome>| {
        if let Some((trial_index, acc, label, run_index, n_windows)) = cur {
            outcomes.push(TrialOutcome {
                trial_index,
                run_index,
                label,
                decision: acc.decision().unwrap_or(Decision::Timeout),
                stop_index: acc.consumed(),
                n_windows,
                final_ev: acc.ev(),
            });
        }
    };

    while let Some(w) = stream.next_window()? {
        if current.as_ref().map(|c| c.0) != Some(w.trial_index) {
            finish(current.take(), &mut outcomes);
            current = Some((w.trial_index, Accumulator::new(cfg), w.label, w.run_index, 0));
        }
        let (trial_index, acc, _, _, n_windows) = current.as_mut().expect("set above");
        *n_windows += 1;
        let state = if acc.decision().is_some() {
            StreamState::Idle
        } else {
            match acc.push(w.prediction) {
                Some(d) => StreamState::Decided(d),
                None => StreamState::Accumulating,
            }
        };
        if state != StreamState::Idle {
            on_event(&StreamEvent {
                trial_index: *trial_index,
                window_index: w.window_index,
                prediction: w.prediction,
                ev: acc.ev(),
                state,
            });
            if realtime {
                thread::sleep(Duration::from_secs_f64(timing.step_s));
            }
        }
    }
    finish(current.take(), &mut outcomes);
    if outcomes.is_empty() {
        return Err(Error::NoTrials);
    }
    Ok(TrialReport { config: cfg, timing, summary: summarize(&outcomes, timing), trials: outcomes })
}

/// Write events as JSON lines.
pub fn write_event_line(out: &mut impl Write, event: &StreamEvent) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, event)?;
    out.write_all(b"\n")
}
