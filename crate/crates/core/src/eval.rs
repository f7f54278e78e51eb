//! Experiment drivers: run-wise cross-validation, PCA sweeps,
//! window-level evaluation and the fine-tuning comparison.
//!
//! Folds are whole runs. Windows of one trial overlap by most of their
//! length, so shuffling windows across folds would leak and inflate
//! accuracy.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, ClassifierKind, FittedClassifier};
use crate::decoder::{fit_transform, train_on_features, Decoder, DecoderConfig};
use crate::error::{Error, Result};
use crate::features::{pca_fit, FeatureMatrix, PcaTransform};
use crate::io::{ClassLabel, Recording};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub test_run: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// Id of the PCA fitted on this fold's training runs.
    pub pca_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub n_windows: usize,
    pub feature_dim: usize,
    pub k: Option<usize>,
    pub classifier: ClassifierKind,
    /// Seed of the label permutation, when the chance control was run.
    pub shuffle_seed: Option<u64>,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation over folds.
    pub std_accuracy: f64,
}

fn accuracy(clf: &impl Classifier, x: &Array2<f64>, y: &[ClassLabel]) -> f64 {
    let correct = x
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(row, &label)| {
            ClassLabel::from_score(clf.score_row(row.as_slice().expect("standard layout"))) == label
        })
        .count();
    correct as f64 / y.len().max(1) as f64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn runs_of(fm: &FeatureMatrix) -> Result<Vec<usize>> {
    let runs: Vec<usize> = fm.run_index.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if runs.len() < 2 {
        return Err(Error::TooFewRuns(runs.len()));
    }
    Ok(runs)
}

/// Permute window labels with a seeded generator (chance-level control).
pub fn shuffle_labels(fm: &mut FeatureMatrix, seed: u64) {
    let mut rng = Pcg64::seed_from_u64(seed);
    fm.labels.shuffle(&mut rng);
}

fn split(fm: &FeatureMatrix, run: usize) -> (FeatureMatrix, FeatureMatrix) {
    (fm.select(|i| fm.run_index[i] != run), fm.select(|i| fm.run_index[i] == run))
}

/// Leave-one-run-out evaluation on pre-computed features.
pub fn runwise_cv_features(fm: &FeatureMatrix, config: &DecoderConfig) -> Result<Vec<FoldResult>> {
    let runs = runs_of(fm)?;
    runs.par_iter()
        .map(|&r| {
            let (train, test) = split(fm, r);
            let (pca, z_train) = fit_transform(train.data.clone(), config.pca_k)?;
            let z_test = match &pca {
                Some(p) => p.transform(test.data.view())?,
                None => test.data.clone(),
            };
            let clf = FittedClassifier::fit(config.classifier, z_train.view(), &train.labels, config.lda)?;
            Ok(FoldResult {
                test_run: r,
                n_train: train.n_rows(),
                n_test: test.n_rows(),
                accuracy: accuracy(&clf, &z_test, &test.labels),
                pca_id: pca.as_ref().map(PcaTransform::id),
            })
        })
        .collect()
}

pub fn runwise_cv(session: &Recording, config: &DecoderConfig, shuffle_seed: Option<u64>) -> Result<CvReport> {
    let mut fm = config.features(session)?;
    if fm.n_rows() == 0 {
        return Err(Error::NoTrials);
    }
    if let Some(seed) = shuffle_seed {
        shuffle_labels(&mut fm, seed);
    }
    let folds = runwise_cv_features(&fm, config)?;
    let (mean, std) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    Ok(CvReport {
        n_windows: fm.n_rows(),
        feature_dim: fm.n_features(),
        k: config.pca_k,
        classifier: config.classifier,
        shuffle_seed,
        folds,
        mean_accuracy: mean,
        std_accuracy: std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub n_windows: usize,
    pub feature_dim: usize,
    pub classifier: ClassifierKind,
    pub points: Vec<SweepPoint>,
    pub best_k: usize,
    pub best_accuracy: f64,
}

/// Run-wise CV for every `k` in `ks`. Each fold is decomposed once at the
/// largest `k` and truncated for the others, which gives the same leading
/// components as separate fits.
pub fn pca_sweep(session: &Recording, config: &DecoderConfig, ks: &[usize]) -> Result<SweepReport> {
    let fm = config.features(session)?;
    if fm.n_rows() == 0 {
        return Err(Error::NoTrials);
    }
    pca_sweep_features(&fm, config, ks)
}

/// [`pca_sweep`] on pre-computed features.
pub fn pca_sweep_features(fm: &FeatureMatrix, config: &DecoderConfig, ks: &[usize]) -> Result<SweepReport> {
    let k_max = *ks.iter().max().ok_or_else(|| Error::BadConfig("empty component list".into()))?;
    let runs = runs_of(fm)?;
    let per_fold: Vec<Vec<f64>> = runs
        .par_iter()
        .map(|&r| {
            let (train, test) = split(fm, r);
            let full = pca_fit(train.data.view(), k_max)?;
            ks.iter()
                .map(|&k| {
                    let mut pca = full.truncate(k)?;
                    pca.quantize_components();
                    let z_train = pca.transform(train.data.view())?;
                    let z_test = pca.transform(test.data.view())?;
                    let clf = FittedClassifier::fit(config.classifier, z_train.view(), &train.labels, config.lda)?;
                    Ok(accuracy(&clf, &z_test, &test.labels))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let accs: Vec<f64> = per_fold.iter().map(|f| f[i]).collect();
            let (mean, std) = mean_std(&accs);
            SweepPoint { k, fold_accuracies: accs, mean_accuracy: mean, std_accuracy: std }
        })
        .collect();
    let best = points.iter().skip(1).fold(&points[0], |b, p| {
        if p.mean_accuracy > b.mean_accuracy || (p.mean_accuracy == b.mean_accuracy && p.k < b.k) {
            p
        } else {
            b
        }
    });
    Ok(SweepReport {
        n_windows: fm.n_rows(),
        feature_dim: fm.n_features(),
        classifier: config.classifier,
        best_k: best.k,
        best_accuracy: best.mean_accuracy,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub n_trials: usize,
    pub n_windows: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, index 0 = Left, 1 = Right.
    pub confusion: [[usize; 2]; 2],
}

/// Window-level accuracy of `decoder` on every window of `session`.
pub fn eval_samples(decoder: &Decoder, session: &Recording) -> Result<SampleReport> {
    let ws = decoder.windows(session)?;
    let preds = decoder.predict_windows(&ws)?;
    Ok(sample_report(&ws.labels(), &preds, ws.trials().len()))
}

fn sample_report(labels: &[ClassLabel], preds: &[ClassLabel], n_trials: usize) -> SampleReport {
    let mut confusion = [[0usize; 2]; 2];
    for (t, p) in labels.iter().zip(preds) {
        confusion[t.index()][p.index()] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    SampleReport {
        n_trials,
        n_windows: preds.len(),
        correct,
        accuracy: correct as f64 / preds.len().max(1) as f64,
        confusion,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    /// Trained on offline, tested on online 1.
    pub base_online1: SampleReport,
    /// Trained on offline, tested on online 2.
    pub base_online2: SampleReport,
    /// Trained on offline + online 1, tested on online 2.
    pub tuned_online2: SampleReport,
    pub base_provenance: String,
    pub tuned_provenance: String,
}

pub fn finetune_experiment(
    offline: &Recording,
    online1: &Recording,
    online2: &Recording,
    config: &DecoderConfig,
) -> Result<FinetuneReport> {
    // features are computed once per session and shared by both decoders
    let feats = [offline, online1, online2].par_iter().map(|r| config.features(r)).collect::<Result<Vec<_>>>()?;
    let base = train_on_features(&[offline], &[&feats[0]], config)?;
    for rec in [online1, online2] {
        base.check_session(rec)?;
    }
    let tuned = train_on_features(&[offline, online1], &[&feats[0], &feats[1]], config)?;
    let eval = |d: &Decoder, fm: &FeatureMatrix| -> Result<SampleReport> {
        let n_trials = fm.trial_index.iter().collect::<BTreeSet<_>>().len();
        if n_trials == 0 {
            return Err(Error::NoTrials);
        }
        Ok(sample_report(&fm.labels, &d.predict_rows(fm), n_trials))
    };
    Ok(FinetuneReport {
        base_online1: eval(&base, &feats[1])?,
        base_online2: eval(&base, &feats[2])?,
        tuned_online2: eval(&tuned, &feats[2])?,
        base_provenance: base.provenance.id.clone(),
        tuned_provenance: tuned.provenance.id.clone(),
    })
}
