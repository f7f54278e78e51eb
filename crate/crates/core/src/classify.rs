//! Two-class linear classifiers: LDA with an SVD solver and a
//! nearest-centroid baseline.
//!
//! Every classifier exposes a signed decision score; `score > 0` predicts
//! `Right`, anything else (including an exact zero) predicts `Left`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ClassLabel;
use crate::linalg;

pub trait Classifier {
    /// Expected feature count.
    fn dim(&self) -> usize;

    fn score_row(&self, x: &[f64]) -> f64;

    fn score(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.ncols() });
        }
        let mut buf = vec![0.0; x.ncols()];
        Ok(x.rows()
            .into_iter()
            .map(|row| match row.as_slice() {
                Some(s) => self.score_row(s),
                None => {
                    buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
                    self.score_row(&buf)
                }
            })
            .collect())
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<ClassLabel>> {
        Ok(self.score(x)?.iter().map(|&s| ClassLabel::from_score(s)).collect())
    }
}

fn class_stats(x: ArrayView2<'_, f64>, y: &[ClassLabel]) -> Result<(Array2<f64>, [usize; 2])> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), actual: y.len() });
    }
    let mut counts = [0usize; 2];
    let mut means = Array2::zeros((2, x.ncols()));
    for (row, label) in x.rows().into_iter().zip(y) {
        counts[label.index()] += 1;
        let mut m = means.row_mut(label.index());
        m += &row;
    }
    if counts.contains(&0) {
        return Err(Error::SingleClass);
    }
    for (mut m, &c) in means.rows_mut().into_iter().zip(&counts) {
        m /= c as f64;
    }
    Ok((means, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaOptions {
    /// Singular values of the within-class data below
    /// `tol * sigma_max` are dropped (pseudo-inverse semantics).
    pub tol: f64,
}

impl Default for LdaOptions {
    fn default() -> Self {
        LdaOptions { tol: 1e-12 }
    }
}

/// Fitted shared-covariance Gaussian discriminant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    /// Row 0 is the Left mean, row 1 the Right mean.
    pub class_means: Array2<f64>,
    pub priors: [f64; 2],
    /// Number of within-class directions kept by the solver.
    pub rank: usize,
}

/// Fit LDA by whitening the pooled within-class scatter through its SVD.
///
/// The within-class centered rows, divided by `sqrt(n - 2)`, are decomposed
/// as `U S V^T`; the discriminant is `w = V S^-2 V^T (mu_R - mu_L)` on the
/// directions that survive the tolerance.
/// The bias puts the boundary at equal posterior under empirical priors.
pub fn lda_fit(x: ArrayView2<'_, f64>, y: &[ClassLabel], opts: LdaOptions) -> Result<LdaModel> {
    let (class_means, counts) = class_stats(x, y)?;
    let (n, k) = x.dim();
    if n <= k {
        log::warn!("lda_fit: {n} samples for {k} features; scatter is rank deficient");
    }
    let dof = n.saturating_sub(2).max(1) as f64;

    let mut centered = x.to_owned();
    for (mut row, label) in centered.rows_mut().into_iter().zip(y) {
        row -= &class_means.row(label.index());
    }
    centered.mapv_inplace(|v| v / dof.sqrt());

    let (s, vt) = linalg::svd_right(centered.view())?;
    let s_max = s.first().copied().unwrap_or(0.0);
    let rank = if s_max > 0.0 { s.iter().take_while(|&&v| v > opts.tol * s_max).count() } else { 0 };
    if rank < k {
        log::debug!("lda_fit: kept {rank} of {k} within-class directions");
    }

    let diff: Array1<f64> = &class_means.row(1) - &class_means.row(0);
    let mut weights = Array1::<f64>::zeros(k);
    for (sv, v) in s.iter().zip(vt.rows()).take(rank) {
        let c = linalg::dot(v.as_slice().expect("standard layout"), diff.as_slice().expect("contiguous")) / (sv * sv);
        weights.scaled_add(c, &v);
    }

    let priors = [counts[0] as f64 / n as f64, counts[1] as f64 / n as f64];
    let midpoint: Array1<f64> = (&class_means.row(0) + &class_means.row(1)) / 2.0;
    let bias = -linalg::dot(weights.as_slice().expect("contiguous"), midpoint.as_slice().expect("contiguous"))
        + (priors[1] / priors[0]).ln();
    Ok(LdaModel { weights, bias, class_means, priors, rank })
}

impl LdaModel {
    /// No usable within-class direction or no mean difference: the model
    /// falls back to the prior.
    pub fn is_degenerate(&self) -> bool {
        self.rank == 0 || self.weights.iter().all(|&w| w == 0.0)
    }
}

impl Classifier for LdaModel {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        linalg::dot(self.weights.as_slice().expect("contiguous"), x) + self.bias
    }
}

/// Euclidean nearest class mean; score `(|x - mu_L|^2 - |x - mu_R|^2) / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    pub class_means: Array2<f64>,
}

pub fn centroid_fit(x: ArrayView2<'_, f64>, y: &[ClassLabel]) -> Result<NearestCentroid> {
    let (class_means, _) = class_stats(x, y)?;
    Ok(NearestCentroid { class_means })
}

impl Classifier for NearestCentroid {
    fn dim(&self) -> usize {
        self.class_means.ncols()
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        let dist = |m: ndarray::ArrayView1<'_, f64>| -> f64 { x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum() };
        (dist(self.class_means.row(0)) - dist(self.class_means.row(1))) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Lda,
    NearestCentroid,
}

/// A fitted classifier of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedClassifier {
    Lda(LdaModel),
    NearestCentroid(NearestCentroid),
}

impl FittedClassifier {
    pub fn fit(kind: ClassifierKind, x: ArrayView2<'_, f64>, y: &[ClassLabel], lda: LdaOptions) -> Result<Self> {
        Ok(match kind {
            ClassifierKind::Lda => FittedClassifier::Lda(lda_fit(x, y, lda)?),
            ClassifierKind::NearestCentroid => FittedClassifier::NearestCentroid(centroid_fit(x, y)?),
        })
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            FittedClassifier::Lda(_) => ClassifierKind::Lda,
            FittedClassifier::NearestCentroid(_) => ClassifierKind::NearestCentroid,
        }
    }

    /// Write `lda.json`, recording the id of the paired feature transform.
    pub fn save(&self, dir: &Path, pca_id: Option<&str>) -> Result<()> {
        let file = ClassifierFile { k: self.dim(), pca_id: pca_id.map(String::from), model: self.clone() };
        let path = dir.join(CLASSIFIER_JSON);
        fs::write(&path, serde_json::to_string_pretty(&file).expect("classifier serializes") + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    /// Load `lda.json`; returns the model and its recorded PCA id.
    pub fn load(dir: &Path) -> Result<(FittedClassifier, Option<String>)> {
        let path = dir.join(CLASSIFIER_JSON);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: ClassifierFile = serde_json::from_str(&text).map_err(|e| Error::MalformedMeta(e.to_string()))?;
        if file.model.dim() != file.k {
            return Err(Error::MalformedMeta(format!("lda.json k = {} but model has {}", file.k, file.model.dim())));
        }
        Ok((file.model, file.pca_id))
    }
}

pub const CLASSIFIER_JSON: &str = "lda.json";

#[derive(Debug, Serialize, Deserialize)]
struct ClassifierFile {
    k: usize,
    pca_id: Option<String>,
    model: FittedClassifier,
}

impl Classifier for FittedClassifier {
    fn dim(&self) -> usize {
        match self {
            FittedClassifier::Lda(m) => m.dim(),
            FittedClassifier::NearestCentroid(m) => m.dim(),
        }
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        match self {
            FittedClassifier::Lda(m) => m.score_row(x),
            FittedClassifier::NearestCentroid(m) => m.score_row(x),
        }
    }
}
