use std::collections::BTreeSet;

use mi_decode::config::PipelineConfig;
use mi_decode::decoder::{train_decoder, DecoderConfig};
use mi_decode::eval::{eval_samples, finetune_experiment, pca_sweep, pca_sweep_features, runwise_cv};
use mi_decode::features::{FeatureKind, FeatureMatrix};
use mi_decode::io::{ClassLabel, EventKind, Recording, SessionKind};
use mi_decode::synth::{generate_session, SynthSpec};
use mi_decode::Error;
use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

fn separable() -> SynthSpec {
    SynthSpec { erd_depth: 1.0, amplitude_jitter: 0.1, ..SynthSpec::default() }
}

fn session(spec: &SynthSpec, kind: SessionKind) -> Recording {
    generate_session(spec, kind).unwrap().0
}

fn cfg() -> DecoderConfig {
    PipelineConfig::default().decoder_config()
}

fn flip_labels(rec: &Recording) -> Recording {
    let events = rec
        .events()
        .iter()
        .map(|e| {
            let mut e = *e;
            e.kind = match e.kind {
                EventKind::CueLeft => EventKind::CueRight,
                EventKind::CueRight => EventKind::CueLeft,
                k => k,
            };
            e
        })
        .collect();
    Recording::new(rec.samples().clone(), rec.fs(), rec.channel_labels().to_vec(), events).unwrap()
}

#[test]
fn separable_session_cross_validates_well() {
    let rec = session(&separable(), SessionKind::Offline);
    let r = runwise_cv(&rec, &cfg(), None).unwrap();
    assert_eq!(r.folds.len(), 4);
    assert_eq!(r.n_windows, 5040);
    assert!(r.mean_accuracy >= 0.9, "{}", r.mean_accuracy);
    for f in &r.folds {
        assert_eq!(f.n_train + f.n_test, 5040);
        assert_eq!(f.n_test, 1260);
    }
}

#[test]
fn shuffled_labels_are_at_chance() {
    let rec = session(&SynthSpec::default(), SessionKind::Offline);
    let r = runwise_cv(&rec, &cfg(), Some(1)).unwrap();
    let sigma = (0.25 / r.n_windows as f64).sqrt();
    assert!((0.45..=0.55).contains(&r.mean_accuracy), "{}", r.mean_accuracy);
    assert!((r.mean_accuracy - 0.5).abs() <= 3.0 * sigma, "{} vs 3 sigma {}", r.mean_accuracy, 3.0 * sigma);
}

#[test]
fn folds_refit_pca_without_leakage() {
    let rec = session(&SynthSpec::default(), SessionKind::Offline);
    let c = DecoderConfig { pca_k: Some(20), ..cfg() };
    let r = runwise_cv(&rec, &c, None).unwrap();
    let ids: BTreeSet<String> = r.folds.iter().map(|f| f.pca_id.clone().unwrap()).collect();
    assert_eq!(ids.len(), 4);
    let again = runwise_cv(&rec, &c, None).unwrap();
    assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn too_few_runs_and_empty_sessions() {
    let spec = SynthSpec { n_runs: 1, ..SynthSpec::default() };
    let rec = session(&spec, SessionKind::Offline);
    assert!(matches!(runwise_cv(&rec, &cfg(), None), Err(Error::TooFewRuns(1))));

    let full = session(&SynthSpec::default(), SessionKind::Offline);
    let empty = Recording::new(full.samples().clone(), full.fs(), full.channel_labels().to_vec(), vec![]).unwrap();
    assert!(matches!(runwise_cv(&empty, &cfg(), None), Err(Error::NoTrials)));
    let d = train_decoder(&[&full], &cfg()).unwrap();
    assert!(matches!(eval_samples(&d, &empty), Err(Error::NoTrials)));
}

#[test]
fn sample_level_symmetry_and_training_fit() {
    let spec = separable();
    let off = session(&spec, SessionKind::Offline);
    let on1 = session(&SynthSpec { seed: spec.seed + 1, ..spec.clone() }, SessionKind::Online1);
    let d = train_decoder(&[&off], &cfg()).unwrap();
    let r = eval_samples(&d, &on1).unwrap();
    let flipped = eval_samples(&d, &flip_labels(&on1)).unwrap();
    assert_eq!(r.n_windows, flipped.n_windows);
    assert!((flipped.accuracy - (1.0 - r.accuracy)).abs() < 1e-12);
    assert_eq!(r.confusion[0][0], flipped.confusion[1][0]);

    let own = eval_samples(&d, &off).unwrap();
    assert!(own.accuracy >= r.accuracy, "train {} < test {}", own.accuracy, r.accuracy);
    assert_eq!(own.n_trials, 80);
    assert_eq!(r.n_windows, 60 * 63);
    assert_eq!(r.confusion.iter().flatten().sum::<usize>(), r.n_windows);
}

#[test]
fn training_is_deterministic_and_provenanced() {
    let spec = SynthSpec::default();
    let off = session(&spec, SessionKind::Offline);
    let on1 = session(&SynthSpec { seed: 8, ..spec.clone() }, SessionKind::Online1);
    let c = DecoderConfig { pca_k: Some(30), ..cfg() };
    let a = train_decoder(&[&off], &c).unwrap();
    let b = train_decoder(&[&off], &c).unwrap();
    assert_eq!(a.k(), Some(30));
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.save(da.path()).unwrap();
    b.save(db.path()).unwrap();
    for f in ["decoder.json", "lda.json", "pca.json", "pca.f32le"] {
        assert_eq!(std::fs::read(da.path().join(f)).unwrap(), std::fs::read(db.path().join(f)).unwrap(), "{f}");
    }
    let tuned = train_decoder(&[&off, &on1], &c).unwrap();
    assert_ne!(a.provenance.id, tuned.provenance.id);
    assert_ne!(a.pca.as_ref().unwrap().id(), tuned.pca.as_ref().unwrap().id());
}

#[test]
fn finetune_structure_and_same_data_bound() {
    let spec = SynthSpec::default();
    let off = session(&spec, SessionKind::Offline);
    let on = session(&SynthSpec { seed: 8, ..spec.clone() }, SessionKind::Online1);
    let r = finetune_experiment(&off, &on, &on, &cfg()).unwrap();
    let json = serde_json::to_value(&r).unwrap();
    let accs: Vec<f64> = ["base_online1", "base_online2", "tuned_online2"]
        .iter()
        .map(|k| json[k]["accuracy"].as_f64().unwrap())
        .collect();
    assert_eq!(accs.len(), 3);
    assert_eq!(accs[0], accs[1]);
    assert_ne!(r.base_provenance, r.tuned_provenance);
    // the tuned decoder has seen the test session
    assert!(r.tuned_online2.accuracy >= r.base_online2.accuracy);
}

/// Features of known rank: a 5-dimensional latent signal embedded in 30
/// dimensions, with the class shift inside the latent space.
fn rank_limited(rank: usize, dim: usize) -> FeatureMatrix {
    let mut rng = Pcg64::seed_from_u64(40);
    let basis = Array2::from_shape_fn((rank, dim), |_| rng.random::<f64>() - 0.5);
    let n = 4 * 200;
    let mut latent = Array2::zeros((n, rank));
    let mut labels = Vec::new();
    for i in 0..n {
        let label = if i % 2 == 0 { ClassLabel::Left } else { ClassLabel::Right };
        for j in 0..rank {
            latent[[i, j]] = rng.random::<f64>() * 2.0 - 1.0;
        }
        latent[[i, 0]] += if label == ClassLabel::Right { 0.4 } else { -0.4 };
        labels.push(label);
    }
    FeatureMatrix {
        data: latent.dot(&basis),
        labels,
        trial_index: (0..n).map(|i| i / 10).collect(),
        run_index: (0..n).map(|i| i / 200).collect(),
    }
}

#[test]
fn sweep_plateaus_beyond_data_rank() {
    let fm = rank_limited(5, 30);
    let ks: Vec<usize> = (1..=12).collect();
    let r = pca_sweep_features(&fm, &cfg(), &ks).unwrap();
    let at_rank = r.points[4].mean_accuracy;
    for p in &r.points[5..] {
        assert!((p.mean_accuracy - at_rank).abs() < 1e-9, "k {}: {} vs {at_rank}", p.k, p.mean_accuracy);
    }
    assert!(r.best_k <= 5);
    // ties resolve to the smaller k
    let single = pca_sweep_features(&fm, &cfg(), &[7, 5, 6]).unwrap();
    assert_eq!(single.best_k, 5);
}

#[test]
fn sweep_at_per_subject_component_counts() {
    // raw windows are 13 x 512 features; three training runs of 6 trials
    // give 1134 rows, enough for 760 components
    let spec = SynthSpec { trials_per_run: 6, ..SynthSpec::default() };
    let rec = session(&spec, SessionKind::Offline);
    let c =
        PipelineConfig { features: FeatureKind::Raw, psd_band_hz: None, ..PipelineConfig::default() }.decoder_config();
    let r = pca_sweep(&rec, &c, &[520, 760, 160]).unwrap();
    assert_eq!(r.feature_dim, 13 * 512);
    assert_eq!(r.points.iter().map(|p| p.k).collect::<Vec<_>>(), vec![520, 760, 160]);
    assert!(r.points.iter().all(|p| p.fold_accuracies.len() == 4));
    let best = r.points.iter().map(|p| p.mean_accuracy).fold(f64::MIN, f64::max);
    assert_eq!(r.best_accuracy, best);
}

#[test]
fn single_k_sweep_is_one_cv_run() {
    let rec = session(&SynthSpec::default(), SessionKind::Offline);
    let c = DecoderConfig { pca_k: Some(40), ..cfg() };
    let one = pca_sweep(&rec, &c, &[40]).unwrap();
    let cv = runwise_cv(&rec, &c, None).unwrap();
    assert_eq!(one.points.len(), 1);
    assert_eq!(one.best_k, 40);
    assert_eq!(one.points[0].fold_accuracies, cv.folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
}

#[test]
fn batch_features_match_per_window_extraction() {
    use mi_decode::decoder::preprocess;
    use mi_decode::features::PsdLayout;
    let spec = SynthSpec { trials_per_run: 4, ..SynthSpec::default() };
    let rec = session(&spec, SessionKind::Offline);
    for layout in [PsdLayout::PerChannel, PsdLayout::ChannelMean] {
        let mut c = cfg();
        c.features.layout = layout;
        let ws = preprocess(&rec, &c.preprocess).unwrap();
        let fx = c.extractor(rec.fs(), rec.n_channels()).unwrap();
        let all = fx.extract_all(&ws).unwrap();
        let mut row = vec![0.0; fx.dim()];
        for i in 0..ws.len() {
            fx.extract(ws.window(i), &mut row).unwrap();
            assert_eq!(all.data.row(i).as_slice().unwrap(), &row[..], "window {i}");
        }
    }
}

#[test]
fn finetune_matches_separately_trained_decoders() {
    let spec = SynthSpec { trials_per_run: 6, ..SynthSpec::default() };
    let off = session(&spec, SessionKind::Offline);
    let on1 = session(&SynthSpec { seed: 8, ..spec.clone() }, SessionKind::Online1);
    let on2 = session(&SynthSpec { seed: 9, ..spec.clone() }, SessionKind::Online2);
    let r = finetune_experiment(&off, &on1, &on2, &cfg()).unwrap();
    let base = train_decoder(&[&off], &cfg()).unwrap();
    let tuned = train_decoder(&[&off, &on1], &cfg()).unwrap();
    assert_eq!(r.base_online1, eval_samples(&base, &on1).unwrap());
    assert_eq!(r.base_online2, eval_samples(&base, &on2).unwrap());
    assert_eq!(r.tuned_online2, eval_samples(&tuned, &on2).unwrap());
    assert_eq!(r.base_provenance, base.provenance.id);
    assert_eq!(r.tuned_provenance, tuned.provenance.id);
}
