//! Rotation of MDS targets onto the current latent configuration.
//!
//! With `P* = Z · Z*⁺` and its SVD `P* = U S Vᵀ`, the rotation is `R = U S* Vᵀ`
//! where `S*` replaces every nonzero singular value by one. Reflections are
//! not excluded.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative threshold below which a singular value of `P*` counts as zero.
pub const FLATTEN_RCOND: f64 = 1e-8;
/// Relative cutoff used for `pinv(Z*)` inside [`ideal_rotation`].
pub const PINV_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub r: Array2<f64>,
    /// `‖Z_c − R·Z*‖_F` with `Z_c` the row-centered `Z`.
    pub residual: f64,
    /// Number of singular values of `P*` kept (flattened to one).
    pub rank_used: usize,
    /// `Z*` was all zeros; `r` is the identity.
    pub degenerate: bool,
}

/// Moore-Penrose pseudo-inverse; singular values `≤ rcond·σ_max` are treated as zero.
pub fn pinv(m: ArrayView2<'_, f64>, rcond: f64) -> Result<Array2<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("pinv input has non-finite entries".into()));
    }
    let (p, q) = m.dim();
    if p == 0 || q == 0 {
        return Ok(Array2::zeros((q, p)));
    }
    let svd = linalg::svd(m).ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let smax = svd.s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(Array2::zeros((q, p)));
    }
    let cutoff = rcond * smax;
    // V · S⁺ · Uᵀ
    let mut vs = svd.vt.t().to_owned();
    for (mut col, &s) in vs.axis_iter_mut(Axis(1)).zip(&svd.s) {
        if s > cutoff {
            col /= s;
        } else {
            col.fill(0.0);
        }
    }
    Ok(vs.dot(&svd.u.t()))
}

fn center_rows(z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = z.mean_axis(Axis(1)).expect("nonempty");
    &z - &mean.insert_axis(Axis(1))
}

/// Computes `R` such that `R·Z*` best matches the centered `Z`.
pub fn ideal_rotation(z: ArrayView2<'_, f64>, zstar: ArrayView2<'_, f64>) -> Result<AlignmentResult> {
    ideal_rotation_with(z, zstar, PINV_RCOND, FLATTEN_RCOND)
}

/// [`ideal_rotation`] with explicit pinv and flattening thresholds.
pub fn ideal_rotation_with(
    z: ArrayView2<'_, f64>,
    zstar: ArrayView2<'_, f64>,
    pinv_rcond: f64,
    flatten_rcond: f64,
) -> Result<AlignmentResult> {
    if z.dim() != zstar.dim() {
        return Err(Error::Shape(format!("Z is {:?} but Z* is {:?}", z.dim(), zstar.dim())));
    }
    let (m, n) = z.dim();
    if n <= m {
        return Err(Error::Precondition(format!("need more samples than latent dimensions, got n={n}, m={m}")));
    }
    let zc = center_rows(z);
    if zstar.iter().all(|&v| v == 0.0) {
        let residual = frobenius(&zc);
        return Ok(AlignmentResult { r: Array2::eye(m), residual, rank_used: 0, degenerate: true });
    }

    let zplus = pinv(zstar, pinv_rcond)?;
    let p = zc.dot(&zplus);
    let svd = linalg::svd(p.view()).ok_or_else(|| Error::Numeric("SVD of P* did not converge".into()))?;
    let smax = svd.s[0];
    let rank_used = svd.s.iter().filter(|&&s| s > flatten_rcond * smax).count();

    let u = svd.u.slice(ndarray::s![.., ..rank_used]);
    let vt = svd.vt.slice(ndarray::s![..rank_used, ..]);
    let mut r = u.dot(&vt);
    if rank_used < m {
        // identity on the orthogonal complement of the retained row space
        r = r + Array2::<f64>::eye(m) - vt.t().dot(&vt);
    }
    let residual = frobenius(&(&zc - &r.dot(&zstar)));
    Ok(AlignmentResult { r, residual, rank_used, degenerate: false })
}

/// Target positions `Z̃ = R·Z*`.
pub fn place_targets(r: ArrayView2<'_, f64>, zstar: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if r.nrows() != r.ncols() || r.ncols() != zstar.nrows() {
        return Err(Error::Shape(format!("R is {:?}, Z* is {:?}", r.dim(), zstar.dim())));
    }
    Ok(r.dot(&zstar))
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
