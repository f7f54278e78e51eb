//! Prints the numbers used to choose the synthetic generator's defaults:
//! run-wise CV accuracy, the label-shuffled control, trial-level results
//! after grid search, and the C3 alpha-power ratio at full ERD depth.
//!
//! Usage: `cargo run --release --example calibrate -- [field=value ...]` with any synthetic-spec field,
//! e.g. `erd_depth=0.5 noise_sigma=1.0`

use std::time::Instant;

use mi_decode::config::PipelineConfig;
use mi_decode::decoder::{train_decoder, DecoderConfig};
use mi_decode::dsp::trial_spans;
use mi_decode::eval::runwise_cv;
use mi_decode::evidence::{default_deltas, default_thetas, grid_search, Objective};
use mi_decode::features::{Welch, WelchSpec};
use mi_decode::io::{ClassLabel, SessionKind};
use mi_decode::synth::{generate_session, generate_study_sessions, SynthSpec, C3};

fn main() -> mi_decode::Result<()> {
    let mut value = serde_json::to_value(SynthSpec::default()).expect("spec serializes");
    for arg in std::env::args().skip(1) {
        let (key, v) = arg.split_once('=').expect("arguments are key=value");
        value[key] = serde_json::from_str(v).expect("numeric value");
    }
    let spec: SynthSpec = serde_json::from_value(value).expect("known spec fields");
    let cfg: DecoderConfig = PipelineConfig::default().decoder_config();

    let t0 = Instant::now();
    let sessions = generate_study_sessions(&spec)?;
    let (off, on1, on2) = (&sessions[0].0, &sessions[1].0, &sessions[2].0);
    println!("generate {:.2}s", t0.elapsed().as_secs_f64());

    let t = Instant::now();
    let cv = runwise_cv(off, &cfg, None)?;
    let folds: Vec<String> = cv.folds.iter().map(|f| format!("{:.3}", f.accuracy)).collect();
    println!("cv mean {:.3} folds [{}] ({:.2}s)", cv.mean_accuracy, folds.join(", "), t.elapsed().as_secs_f64());
    let sh = runwise_cv(off, &cfg, Some(1))?;
    println!("shuffled mean {:.3}", sh.mean_accuracy);

    let dec = train_decoder(&[off], &cfg)?;
    for (name, s) in [("online1", on1), ("online2", on2)] {
        let g = grid_search(&dec, s, &default_thetas(), &default_deltas(), Objective::Lexicographic)?;
        let w = &g.winner_summary;
        println!(
            "{name}: theta {} delta {} -> {:.1}/{:.1}/{:.1} latency {:?}",
            g.winner.theta, g.winner.delta, w.correct_pct, w.incorrect_pct, w.timeout_pct, w.mean_latency_s
        );
    }

    // band-power ratio at full depth on the raw recording
    let full = SynthSpec { erd_depth: 1.0, ..spec.clone() };
    let (rec, _) = generate_session(&full, SessionKind::Offline)?;
    let welch = Welch::new(WelchSpec::default(), rec.fs())?;
    let alpha: Vec<usize> =
        (0..WelchSpec::default().n_bins()).filter(|&b| (8.0..=12.0).contains(&welch.bin_hz(b))).collect();
    let band = |p: &[f64]| alpha.iter().map(|&b| p[b]).sum::<f64>();
    let mut psd = vec![0.0; WelchSpec::default().n_bins()];
    let (mut rest, mut erd) = (Vec::new(), Vec::new());
    for s in trial_spans(&rec)? {
        if s.label != ClassLabel::Right {
            continue;
        }
        let fb = rec.samples().slice(ndarray::s![s.start..s.end, C3]);
        welch.psd_into(fb, &mut psd)?;
        erd.push(band(&psd));
        let pre = rec.samples().slice(ndarray::s![s.start - 1536..s.start - 512, C3]);
        welch.psd_into(pre, &mut psd)?;
        rest.push(band(&psd));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("d=1 C3 alpha ratio {:.4}", mean(&erd) / mean(&rest));
    println!("total {:.2}s", t0.elapsed().as_secs_f64());
    Ok(())
}
