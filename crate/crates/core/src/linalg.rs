//! Thin wrappers over faer's SVD and a few dense helpers.

use faer::diag::Diag;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{self, ComputeSvdVectors};
use faer::{Mat, Par};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Singular values (non-increasing) and right singular vectors of `a`.
///
/// Returns `(s, vt)` with `vt` holding the `min(n, d)` right singular
/// vectors as rows. Left vectors are never formed.
pub fn svd_right(a: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let (n, d) = a.dim();
    let r = n.min(d);
    if r == 0 {
        return Ok((vec![], Array2::zeros((0, d))));
    }
    let m = Mat::<f64>::from_fn(n, d, |i, j| a[[i, j]]);
    let mut s = Diag::<f64>::zeros(r);
    let mut v = Mat::<f64>::zeros(d, r);
    let par = Par::Seq;
    let mut buf = MemBuffer::new(svd::svd_scratch::<f64>(
        n,
        d,
        ComputeSvdVectors::No,
        ComputeSvdVectors::Thin,
        par,
        Default::default(),
    ));
    svd::svd(m.as_ref(), s.as_mut(), None, Some(v.as_mut()), par, MemStack::new(&mut buf), Default::default())
        .map_err(|_| Error::SvdFailure)?;
    let sv: Vec<f64> = s.column_vector().iter().copied().collect();
    let vt = Array2::from_shape_fn((r, d), |(i, j)| v[(j, i)]);
    Ok((sv, vt))
}

pub fn singular_values(a: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let (n, d) = a.dim();
    if n.min(d) == 0 {
        return Ok(vec![]);
    }
    let m = Mat::<f64>::from_fn(n, d, |i, j| a[[i, j]]);
    m.singular_values().map_err(|_| Error::SvdFailure)
}

/// Plain dot product with a fixed summation order; every scoring path
/// goes through here so batch and streaming results agree bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Column means of `x`.
pub fn column_means(x: ArrayView2<'_, f64>) -> ndarray::Array1<f64> {
    let n = x.nrows().max(1) as f64;
    x.sum_axis(ndarray::Axis(0)) / n
}
