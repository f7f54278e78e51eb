//! Aligned text tables for `--text`. Numbers are the JSON values rounded
//! for display: accuracies to 4 decimals, percentages to 1.

use std::fmt::Write;

use mi_decode::eval::{CvReport, SampleReport};
use mi_decode::evidence::{TrialReport, TrialSummary};

use crate::commands::Outcome;

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line =
        |cells: Vec<&str>| cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ");
    writeln!(out, "{}", line(header.to_vec())).unwrap();
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect())).unwrap();
    }
}

fn acc(v: f64) -> String {
    format!("{v:.4}")
}

fn pct(v: f64) -> String {
    format!("{v:.1}")
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn cv_table(out: &mut String, title: &str, r: &CvReport) {
    writeln!(out, "{title}: {} windows, {} features, k {}", r.n_windows, r.feature_dim, opt(r.k.map(|k| k as f64), 0))
        .unwrap();
    let rows: Vec<Vec<String>> = r
        .folds
        .iter()
        .map(|f| vec![f.test_run.to_string(), f.n_train.to_string(), f.n_test.to_string(), acc(f.accuracy)])
        .collect();
    table(out, &["test_run", "n_train", "n_test", "accuracy"], &rows);
    writeln!(out, "mean {}  std {}", acc(r.mean_accuracy), acc(r.std_accuracy)).unwrap();
}

fn sample_rows(rows: &[(&str, &SampleReport)]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|(name, r)| {
            vec![
                name.to_string(),
                r.n_windows.to_string(),
                acc(r.accuracy),
                format!("{} {} / {} {}", r.confusion[0][0], r.confusion[0][1], r.confusion[1][0], r.confusion[1][1]),
            ]
        })
        .collect()
}

const SAMPLE_HEADER: [&str; 4] = ["decoder", "windows", "accuracy", "confusion LL LR / RL RR"];

fn summary_row(name: &str, theta: f64, delta: f64, s: &TrialSummary) -> Vec<String> {
    vec![
        name.to_string(),
        theta.to_string(),
        delta.to_string(),
        s.n_trials.to_string(),
        pct(s.correct_pct),
        pct(s.incorrect_pct),
        pct(s.timeout_pct),
        opt(s.mean_latency_windows, 2),
        opt(s.mean_latency_s, 3),
    ]
}

const TRIAL_HEADER: [&str; 9] =
    ["decoder", "theta", "delta", "trials", "correct%", "incorrect%", "timeout%", "latency_win", "latency_s"];

fn trial_table(out: &mut String, name: &str, r: &TrialReport) {
    table(out, &TRIAL_HEADER, &[summary_row(name, r.config.theta, r.config.delta, &r.summary)]);
}

pub fn text(command: &str, config_hash: &str, outcome: &Outcome) -> String {
    let mut out = String::new();
    writeln!(out, "mi-decode {} {command} (config {config_hash})", env!("CARGO_PKG_VERSION")).unwrap();
    match outcome {
        Outcome::Generate { out: dir, sessions, .. } => {
            writeln!(out, "wrote {dir}").unwrap();
            let rows: Vec<Vec<String>> = sessions
                .iter()
                .map(|s| {
                    vec![
                        s.dir.clone(),
                        format!("{:?}", s.kind),
                        s.n_runs.to_string(),
                        s.n_trials.to_string(),
                        s.fingerprint.clone(),
                    ]
                })
                .collect();
            table(&mut out, &["dir", "kind", "runs", "trials", "fingerprint"], &rows);
        }
        Outcome::ImportCsv { out: dir, session, n_samples, n_channels } => {
            writeln!(
                out,
                "wrote {dir}: {n_samples} samples x {n_channels} channels, {} trials, fingerprint {}",
                session.n_trials, session.fingerprint
            )
            .unwrap();
        }
        Outcome::Train(d) => {
            writeln!(
                out,
                "decoder {}: {:?}, {} features, k {}, provenance {}",
                d.dir,
                d.classifier,
                d.feature_dim,
                opt(d.k.map(|k| k as f64), 0),
                d.provenance.id
            )
            .unwrap();
        }
        Outcome::Cv(r) => cv_table(&mut out, "run-wise cv", r),
        Outcome::EvalSamples { decoder, report, .. } => {
            table(&mut out, &SAMPLE_HEADER, &sample_rows(&[(decoder.as_str(), report)]));
        }
        Outcome::EvalTrials { decoder, report, .. } | Outcome::Replay { decoder, report, .. } => {
            trial_table(&mut out, decoder, report);
        }
        Outcome::PcaSweep(r) => {
            let rows: Vec<Vec<String>> =
                r.points.iter().map(|p| vec![p.k.to_string(), acc(p.mean_accuracy), acc(p.std_accuracy)]).collect();
            table(&mut out, &["k", "mean", "std"], &rows);
            writeln!(out, "best k {} ({})", r.best_k, acc(r.best_accuracy)).unwrap();
        }
        Outcome::GridSearch { decoder, search, .. } => {
            out.push_str(&search.to_csv());
            table(
                &mut out,
                &TRIAL_HEADER,
                &[summary_row(decoder, search.winner.theta, search.winner.delta, &search.winner_summary)],
            );
        }
        Outcome::Repro(r) => {
            cv_table(&mut out, "run-wise cv", &r.cv);
            cv_table(&mut out, "label-shuffled cv", &r.cv_shuffled);
            let rows: Vec<(&str, &SampleReport)> = r.samples.iter().map(|(k, v)| (k.as_str(), v)).collect();
            writeln!(out, "sample level").unwrap();
            table(&mut out, &SAMPLE_HEADER, &sample_rows(&rows));
            writeln!(out, "trial level").unwrap();
            let rows: Vec<Vec<String>> = r
                .trials
                .iter()
                .map(|b| {
                    summary_row(
                        &format!("{}_{}", b.decoder, b.session),
                        b.winner.theta,
                        b.winner.delta,
                        &b.report.summary,
                    )
                })
                .collect();
            table(&mut out, &TRIAL_HEADER, &rows);
        }
    }
    out
}
