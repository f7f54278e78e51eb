use std::f64::consts::PI;

use mi_decode::classify::{centroid_fit, lda_fit, Classifier, ClassifierKind, FittedClassifier, LdaOptions};
use mi_decode::io::ClassLabel::{self, Left, Right};
use mi_decode::Error;
use ndarray::{array, Array1, Array2};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

fn gauss(rng: &mut Pcg64) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Two correlated 2-D Gaussian clouds.
fn clouds(rng: &mut Pcg64, n: usize, sigma: f64, mu_l: [f64; 2], mu_r: [f64; 2]) -> (Array2<f64>, Vec<ClassLabel>) {
    let mut x = Array2::zeros((2 * n, 2));
    let mut y = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let (mu, label) = if i % 2 == 0 { (mu_l, Left) } else { (mu_r, Right) };
        let (a, b) = (gauss(rng), gauss(rng));
        x[[i, 0]] = mu[0] + sigma * a;
        x[[i, 1]] = mu[1] + sigma * (0.6 * a + 0.8 * b);
        y.push(label);
    }
    (x, y)
}

/// Pooled-covariance Fisher direction with an explicit 2x2 inverse.
fn closed_form_direction(x: &Array2<f64>, y: &[ClassLabel]) -> [f64; 2] {
    let mut mean = [[0.0; 2]; 2];
    let mut count = [0.0; 2];
    for (row, l) in x.rows().into_iter().zip(y) {
        let c = l.index();
        count[c] += 1.0;
        mean[c][0] += row[0];
        mean[c][1] += row[1];
    }
    for c in 0..2 {
        mean[c][0] /= count[c];
        mean[c][1] /= count[c];
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (row, l) in x.rows().into_iter().zip(y) {
        let m = mean[l.index()];
        let (dx, dy) = (row[0] - m[0], row[1] - m[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let det = sxx * syy - sxy * sxy;
    let d = [mean[1][0] - mean[0][0], mean[1][1] - mean[0][1]];
    [(syy * d[0] - sxy * d[1]) / det, (-sxy * d[0] + sxx * d[1]) / det]
}

fn angle(a: &Array1<f64>, b: [f64; 2]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1];
    let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

#[test]
fn weights_follow_closed_form_direction() {
    let mut rng = Pcg64::seed_from_u64(10);
    for _ in 0..20 {
        let (x, y) = clouds(&mut rng, 200, 1.0, [0.0, 0.0], [1.0, 0.5]);
        let m = lda_fit(x.view(), &y, LdaOptions::default()).unwrap();
        let want = closed_form_direction(&x, &y);
        assert!(angle(&m.weights, want) < 1e-6, "angle {}", angle(&m.weights, want));
    }
}

#[test]
fn tight_clouds_are_separated() {
    let mut rng = Pcg64::seed_from_u64(11);
    let (x, y) = clouds(&mut rng, 500, 0.1, [-1.0, 0.0], [1.0, 0.0]);
    let m = lda_fit(x.view(), &y, LdaOptions::default()).unwrap();
    let pred = m.predict(x.view()).unwrap();
    let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn predictions_are_affine_invariant() {
    let mut rng = Pcg64::seed_from_u64(12);
    let (x, y) = clouds(&mut rng, 150, 1.0, [0.0, 0.0], [1.5, -0.5]);
    let (test, _) = clouds(&mut rng, 200, 1.5, [0.0, 0.0], [1.5, -0.5]);
    let a = array![[2.0, 0.3], [-0.7, 1.1]];
    let b = array![5.0, -3.0];
    let map = |m: &Array2<f64>| m.dot(&a) + &b;
    let m1 = lda_fit(x.view(), &y, LdaOptions::default()).unwrap();
    let m2 = lda_fit(map(&x).view(), &y, LdaOptions::default()).unwrap();
    let s1 = m1.score(test.view()).unwrap();
    let s2 = m2.score(map(&test).view()).unwrap();
    let mut checked = 0;
    for (p, q) in s1.iter().zip(s2.iter()) {
        if p.abs() > 1e-6 {
            assert_eq!(p > &0.0, q > &0.0);
            assert!((p - q).abs() < 1e-8 * p.abs().max(1.0));
            checked += 1;
        }
    }
    assert!(checked > 350);
}

#[test]
fn tie_predicts_left_and_errors() {
    let x = array![[0.0], [0.0], [1.0], [1.0]];
    let y = [Left, Left, Right, Right];
    let m = centroid_fit(x.view(), &y).unwrap();
    assert_eq!(m.score_row(&[0.5]), 0.0);
    assert_eq!(m.predict(array![[0.5]].view()).unwrap(), vec![Left]);
    assert!(matches!(lda_fit(x.view(), &[Left; 4], LdaOptions::default()), Err(Error::SingleClass)));
    let m = lda_fit(x.view(), &y, LdaOptions::default()).unwrap();
    assert!(matches!(m.score(array![[1.0, 2.0]].view()), Err(Error::DimensionMismatch { expected: 1, actual: 2 })));
}

#[test]
fn rank_deficient_features_still_fit() {
    // third column duplicates the first: within-class scatter is singular
    let mut rng = Pcg64::seed_from_u64(13);
    let (x2, y) = clouds(&mut rng, 100, 1.0, [0.0, 0.0], [2.0, 0.0]);
    let x = Array2::from_shape_fn((x2.nrows(), 3), |(i, j)| x2[[i, if j == 2 { 0 } else { j }]]);
    let m = lda_fit(x.view(), &y, LdaOptions::default()).unwrap();
    assert_eq!(m.rank, 2);
    let acc = m.predict(x.view()).unwrap().iter().zip(&y).filter(|(p, t)| p == t).count();
    assert!(acc as f64 / y.len() as f64 > 0.8);
}

#[test]
fn fitted_classifier_roundtrip() {
    let mut rng = Pcg64::seed_from_u64(14);
    let (x, y) = clouds(&mut rng, 50, 1.0, [0.0, 0.0], [1.0, 1.0]);
    for kind in [ClassifierKind::Lda, ClassifierKind::NearestCentroid] {
        let c = FittedClassifier::fit(kind, x.view(), &y, LdaOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path(), Some("abc")).unwrap();
        let (back, id) = FittedClassifier::load(dir.path()).unwrap();
        assert_eq!(back, c);
        assert_eq!(id.as_deref(), Some("abc"));
    }
}
