//! Independent reference implementations shared by the integration tests
//! and the acceptance target.
#![allow(dead_code)]

use std::f64::consts::PI;

use mi_decode::evidence::{Decision, TrialPredictions};
use mi_decode::io::ClassLabel;
use ndarray::Array2;
use rand::RngExt;
use rand_pcg::Pcg64;

pub fn gauss(rng: &mut Pcg64) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn randn(rng: &mut Pcg64, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| gauss(rng))
}

/// Evidence walk in exact integer arithmetic: `theta` and `delta` are in
/// thousandths. Returns the decision and the number of windows consumed.
pub fn brute_force(preds: &[ClassLabel], theta_milli: i64, delta_milli: i64) -> (Decision, usize) {
    let mut ev = 0i64;
    for (i, p) in preds.iter().enumerate() {
        ev += if *p == ClassLabel::Right { delta_milli } else { -delta_milli };
        if ev > theta_milli {
            return (Decision::Right, i + 1);
        }
        if ev < -theta_milli {
            return (Decision::Left, i + 1);
        }
    }
    (Decision::Timeout, preds.len())
}

pub fn random_sequence(rng: &mut Pcg64, len: usize, p_right: f64) -> Vec<ClassLabel> {
    (0..len).map(|_| if rng.random::<f64>() < p_right { ClassLabel::Right } else { ClassLabel::Left }).collect()
}

/// A session of trials whose window predictions are correct with
/// probability `accuracy`.
pub fn random_predictor(rng: &mut Pcg64, n_trials: usize, n_windows: usize, accuracy: f64) -> Vec<TrialPredictions> {
    (0..n_trials)
        .map(|i| {
            let label = if i % 2 == 0 { ClassLabel::Left } else { ClassLabel::Right };
            let predictions =
                (0..n_windows).map(|_| if rng.random::<f64>() < accuracy { label } else { label.flipped() }).collect();
            TrialPredictions { label, run_index: i / 20, predictions }
        })
        .collect()
}

/// (correct, incorrect, timeout) over all trials for one grid cell,
/// computed with [`brute_force`].
pub fn cell_counts(trials: &[TrialPredictions], theta_milli: i64, delta_milli: i64) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for t in trials {
        match brute_force(&t.predictions, theta_milli, delta_milli).0 {
            Decision::Timeout => c.2 += 1,
            d if d == t.label.into() => c.0 += 1,
            _ => c.1 += 1,
        }
    }
    c
}

/// Lexicographic winner over the grid, returned as (theta, delta) in
/// thousandths: most correct, then fewest incorrect, then fewest timeouts,
/// then smaller theta, then smaller delta.
pub fn lexicographic_winner(trials: &[TrialPredictions], thetas: &[i64], deltas: &[i64]) -> (i64, i64) {
    let mut keyed = Vec::new();
    for &t in thetas {
        for &d in deltas {
            let (c, i, to) = cell_counts(trials, t, d);
            keyed.push(((usize::MAX - c, i, to, t, d), (t, d)));
        }
    }
    keyed.iter().min_by_key(|(k, _)| *k).unwrap().1
}

pub fn milli(v: f64) -> i64 {
    (v * 1000.0).round() as i64
}

/// Welch band power (periodic Hann, mean detrend, one-sided density)
/// summed over bins in `[lo, hi]` Hz, with each bin a direct DFT sum.
pub fn band_power(x: &[f64], fs: f64, nperseg: usize, lo: f64, hi: f64) -> f64 {
    let w: Vec<f64> = (0..nperseg).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / nperseg as f64).cos()).collect();
    let wss: f64 = w.iter().map(|v| v * v).sum();
    let step = nperseg / 2;
    let n_seg = (x.len() - nperseg) / step + 1;
    let bins: Vec<usize> =
        (1..nperseg / 2).filter(|&k| (lo..=hi).contains(&(k as f64 * fs / nperseg as f64))).collect();
    let mut total = 0.0;
    for s in 0..n_seg {
        let seg = &x[s * step..s * step + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for &k in &bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in seg.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / nperseg as f64;
                re += (v - mean) * w[i] * a.cos();
                im += (v - mean) * w[i] * a.sin();
            }
            total += 2.0 * (re * re + im * im) / (fs * wss);
        }
    }
    total / n_seg as f64
}

/// Closed-form magnitude of a digital Butterworth band-pass obtained by the
/// low-pass to band-pass transform and a prewarped bilinear map:
/// `|H|^2 = 1 / (1 + ((W^2 - W0^2) / (W * B))^(2N))` with `W = 2 fs tan(w/2)`.
pub fn butterworth_bp_db(low: f64, high: f64, order: usize, fs: f64, f: f64) -> f64 {
    let warp = |hz: f64| 2.0 * fs * (PI * hz / fs).tan();
    let (wl, wh, w) = (warp(low), warp(high), warp(f));
    let x = (w * w - wl * wh) / (w * (wh - wl));
    let n = (order / 2) as i32;
    -10.0 * (1.0 + x.powi(2 * n)).log10()
}
