//! ndarray <-> nalgebra bridging for the dense factorizations.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

pub(crate) fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD `a = u · diag(s) · vt` with singular values in descending order.
pub(crate) struct Svd {
    pub u: Array2<f64>,
    pub s: Vec<f64>,
    pub vt: Array2<f64>,
}

pub(crate) fn svd(a: ArrayView2<'_, f64>) -> Option<Svd> {
    let m = to_na(a);
    let svd = m.try_svd(true, true, f64::EPSILON, 0)?;
    let mut svd = svd;
    svd.sort_by_singular_values();
    Some(Svd { u: from_na(svd.u.as_ref()?), s: svd.singular_values.iter().copied().collect(), vt: from_na(svd.v_t.as_ref()?) })
}
