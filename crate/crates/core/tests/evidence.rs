mod common;

use common::{brute_force, cell_counts, lexicographic_winner, milli, random_predictor, random_sequence};
use mi_decode::evidence::{
    accumulate, default_deltas, default_thetas, evaluate_trials, grid_search_predictions, Decision, EvidenceConfig,
    Objective, TrialPredictions, WindowTiming,
};
use mi_decode::io::ClassLabel::{self, Left, Right};
use mi_decode::Error;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

const TIMING: WindowTiming = WindowTiming { win_len_s: 1.0, step_s: 0.0625 };

fn cfg(theta_milli: i64, delta_milli: i64) -> EvidenceConfig {
    EvidenceConfig::new(theta_milli as f64 / 1000.0, delta_milli as f64 / 1000.0).unwrap()
}

#[test]
fn matches_brute_force_on_ten_thousand_cases() {
    let mut rng = Pcg64::seed_from_u64(20);
    for case in 0..10_000 {
        let len = rng.random_range(1..=63);
        let p = rng.random::<f64>();
        let seq = random_sequence(&mut rng, len, p);
        // grid-like values often land exactly on the threshold
        let (t, d) = if case % 2 == 0 {
            let t = rng.random_range(1..=10) * 100;
            (t, rng.random_range(1..=10) * 10)
        } else {
            let t = rng.random_range(1..=1000);
            (t, rng.random_range(1..=t))
        };
        let d = d.min(t);
        let got = accumulate(&seq, cfg(t, d)).unwrap();
        let want = brute_force(&seq, t, d);
        assert_eq!((got.decision, got.stop_index), want, "case {case}: theta {t} delta {d} seq {seq:?}");
    }
}

#[test]
fn strict_threshold_edge() {
    let out = accumulate(&[Right; 10], EvidenceConfig::new(0.5, 0.1).unwrap()).unwrap();
    assert_eq!(out.decision, Decision::Right);
    assert_eq!(out.stop_index, 6);
    assert!((out.trajectory[4] - 0.5).abs() < 1e-12);
    assert!((out.trajectory[5] - 0.6).abs() < 1e-12);

    let out = accumulate(&[Left; 5], EvidenceConfig::new(0.5, 0.1).unwrap()).unwrap();
    assert_eq!((out.decision, out.stop_index), (Decision::Timeout, 5));

    let out = accumulate(&[Right, Left, Right, Left], EvidenceConfig::new(0.1, 0.1).unwrap()).unwrap();
    assert_eq!((out.decision, out.stop_index), (Decision::Timeout, 4));
    assert_eq!(out.trajectory.len(), 4);
}

#[test]
fn config_and_input_errors() {
    assert!(matches!(accumulate(&[], EvidenceConfig::new(0.5, 0.1).unwrap()), Err(Error::EmptyTrial)));
    for (t, d) in [(0.5, 0.6), (1.1, 0.1), (0.5, 0.0), (0.5, -0.1)] {
        assert!(matches!(EvidenceConfig::new(t, d), Err(Error::BadEvidenceConfig(_))));
    }
    assert!(matches!(evaluate_trials(&[], EvidenceConfig::new(0.5, 0.1).unwrap(), TIMING), Err(Error::NoTrials)));
    let trials = random_predictor(&mut Pcg64::seed_from_u64(1), 4, 10, 0.6);
    assert!(matches!(
        grid_search_predictions(&trials, &[], &[0.1], Objective::Lexicographic, TIMING),
        Err(Error::EmptyGrid)
    ));
}

fn labels() -> impl Strategy<Value = Vec<ClassLabel>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { Right } else { Left }), 1..64)
}

proptest! {
    #[test]
    fn trajectory_invariants(seq in labels(), t in 1i64..=1000, d_frac in 0.0f64..1.0) {
        let d = ((t as f64 * d_frac) as i64).max(1);
        let c = cfg(t, d);
        let out = accumulate(&seq, c).unwrap();
        prop_assert_eq!(out.trajectory.len(), out.stop_index);
        let last = out.stop_index - 1;
        for (i, ev) in out.trajectory.iter().enumerate() {
            if i < last || out.decision == Decision::Timeout {
                prop_assert!(milli(ev.abs()) <= t);
            }
        }
        match out.decision {
            Decision::Timeout => prop_assert_eq!(out.stop_index, seq.len()),
            Decision::Right => prop_assert!(milli(out.trajectory[last]) > t),
            Decision::Left => prop_assert!(milli(out.trajectory[last]) < -t),
        }
    }

    #[test]
    fn raising_theta_never_stops_earlier(seq in labels(), t1 in 1i64..=1000, t2 in 1i64..=1000, d in 1i64..=100) {
        let (lo, hi) = (t1.min(t2).max(d), t1.max(t2).max(d));
        let a = accumulate(&seq, cfg(lo, d)).unwrap();
        let b = accumulate(&seq, cfg(hi, d)).unwrap();
        prop_assert!(b.stop_index >= a.stop_index);
        if a.decision == Decision::Timeout {
            prop_assert_eq!(b.decision, Decision::Timeout);
        }
    }

    #[test]
    fn scaling_theta_and_delta_together(seq in labels(), t in 1i64..=1000, d_frac in 0.0f64..1.0, c in 1i64..=20) {
        let d = ((t as f64 * d_frac) as i64).max(1);
        let base = accumulate(&seq, cfg(t, d)).unwrap();
        let scaled = accumulate(&seq, EvidenceConfig {
            theta: (t * c) as f64 / 1000.0 / 7.0,
            delta: (d * c) as f64 / 1000.0 / 7.0,
        }).unwrap();
        prop_assert_eq!((base.decision, base.stop_index), (scaled.decision, scaled.stop_index));
    }

    #[test]
    fn counts_are_conserved(seed in any::<u64>(), n in 1usize..40, t in 1i64..=10, d in 1i64..=10) {
        let trials = random_predictor(&mut Pcg64::seed_from_u64(seed), n, 30, 0.6);
        let d = (d * 10).min(t * 100);
        let r = evaluate_trials(&trials, cfg(t * 100, d), TIMING).unwrap();
        let s = &r.summary;
        prop_assert_eq!(s.correct + s.incorrect + s.timeout, n);
        prop_assert!((s.correct_pct + s.incorrect_pct + s.timeout_pct - 100.0).abs() < 1e-9);
        prop_assert_eq!((s.correct, s.incorrect, s.timeout), cell_counts(&trials, t * 100, d));
    }
}

#[test]
fn larger_theta_can_reverse_a_decision() {
    // the walk dips to -0.2 first but ends at +0.4
    let seq = [Left, Left, Right, Right, Right, Right, Right, Right];
    let tight = accumulate(&seq, EvidenceConfig::new(0.1, 0.1).unwrap()).unwrap();
    let loose = accumulate(&seq, EvidenceConfig::new(0.3, 0.1).unwrap()).unwrap();
    assert_eq!((tight.decision, tight.stop_index), (Decision::Left, 2));
    assert_eq!((loose.decision, loose.stop_index), (Decision::Right, 8));
}

#[test]
fn grid_winner_matches_exhaustive_reevaluation() {
    let thetas: Vec<i64> = default_thetas().iter().map(|&v| milli(v)).collect();
    let deltas: Vec<i64> = default_deltas().iter().map(|&v| milli(v)).collect();
    let mut rng = Pcg64::seed_from_u64(21);
    for _ in 0..100 {
        let trials = random_predictor(&mut rng, 60, 63, 0.6);
        let g =
            grid_search_predictions(&trials, &default_thetas(), &default_deltas(), Objective::Lexicographic, TIMING)
                .unwrap();
        assert_eq!((milli(g.winner.theta), milli(g.winner.delta)), lexicographic_winner(&trials, &thetas, &deltas));
        assert_eq!(g.cells.len(), 100);
        for cell in &g.cells {
            let s = &cell.summary;
            assert_eq!((s.correct, s.incorrect, s.timeout), cell_counts(&trials, milli(cell.theta), milli(cell.delta)));
        }
    }
}

#[test]
fn weighted_objective_winner() {
    let mut rng = Pcg64::seed_from_u64(22);
    for _ in 0..20 {
        let trials = random_predictor(&mut rng, 40, 63, 0.6);
        let obj = Objective::Weighted { alpha: 1.0, beta: 0.5 };
        let g = grid_search_predictions(&trials, &default_thetas(), &default_deltas(), obj, TIMING).unwrap();
        let n = trials.len() as f64;
        let mut best: Option<(f64, i64, i64)> = None;
        for t in (1..=10).map(|i| i * 100) {
            for d in (1..=10).map(|i| i * 10) {
                let (c, i, to) = cell_counts(&trials, t, d);
                let score = 100.0 * (c as f64 - i as f64 - 0.5 * to as f64) / n;
                if best.is_none_or(|b| score > b.0 + 1e-9) {
                    best = Some((score, t, d));
                }
            }
        }
        let b = best.unwrap();
        assert_eq!((milli(g.winner.theta), milli(g.winner.delta)), (b.1, b.2));
    }
}

#[test]
fn ties_go_to_smaller_theta_then_delta() {
    // constant correct predictions: every cell decides every trial correctly
    let trials: Vec<TrialPredictions> = (0..6)
        .map(|i| {
            let label = if i % 2 == 0 { Left } else { Right };
            TrialPredictions { label, run_index: 0, predictions: vec![label; 63] }
        })
        .collect();
    let g = grid_search_predictions(&trials, &default_thetas(), &default_deltas(), Objective::Lexicographic, TIMING)
        .unwrap();
    assert_eq!((milli(g.winner.theta), milli(g.winner.delta)), (100, 10));
    assert_eq!(g.winner_summary.correct, 6);

    // reversed grid order must not change the winner
    let mut thetas = default_thetas();
    thetas.reverse();
    let mut deltas = default_deltas();
    deltas.reverse();
    let r = grid_search_predictions(&trials, &thetas, &deltas, Objective::Lexicographic, TIMING).unwrap();
    assert_eq!(r.winner, g.winner);
}

#[test]
fn latency_reporting() {
    let trials = vec![
        TrialPredictions { label: Right, run_index: 0, predictions: vec![Right; 10] },
        TrialPredictions { label: Left, run_index: 0, predictions: vec![Right, Left, Right, Left] },
    ];
    let r = evaluate_trials(&trials, EvidenceConfig::new(0.3, 0.1).unwrap(), TIMING).unwrap();
    assert_eq!(r.trials[0].stop_index, 4);
    assert_eq!(r.trials[1].decision, Decision::Timeout);
    assert_eq!(r.summary.mean_latency_windows, Some(4.0));
    assert!((r.summary.mean_latency_s.unwrap() - (1.0 + 3.0 * 0.0625)).abs() < 1e-12);
    assert!((r.summary.correct_pct - 50.0).abs() < 1e-12);
}

#[test]
fn grid_csv_shape() {
    let trials = random_predictor(&mut Pcg64::seed_from_u64(3), 10, 63, 0.7);
    let g = grid_search_predictions(&trials, &default_thetas(), &default_deltas(), Objective::Lexicographic, TIMING)
        .unwrap();
    let csv = g.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines.iter().all(|l| l.split(',').count() == 11));
}
