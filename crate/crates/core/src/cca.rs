//! Asymmetric sparse CCA between a low-dimensional `Y` (`N × d`) and a
//! high-dimensional `X` (`N × p`), and classical CCA as a reference.
//!
//! Sparse CCA regresses the whitened responses `M = Y Σ̂_Y^{-1/2}` on `X` with
//! a row-wise group lasso, then takes the eigendecomposition
//! `B̂ᵀ Σ̂_X B̂ = H̃ D² H̃ᵀ` to obtain `T = B̂ H̃ D⁻¹`, `H = Σ̂_Y^{-1/2} H̃` and
//! correlations `D`. Inputs are used as given: callers center.

use nalgebra::DMatrix;

use crate::grouplasso::{GroupLasso, SolverOptions};
use crate::linalg::{gram, spectral_map, sym_eigen, thin_svd};
use crate::{Error, Result};

pub const DEFAULT_REL_TOL: f64 = 1e-10;
/// Correlations at or below this fraction of the largest are dropped.
pub const RETAIN_TOL: f64 = 1e-10;
/// Adjacent correlations closer than this (relative) are flagged as tied.
pub const TIE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    /// `p × K`, columns `θ̂_k`.
    pub t: DMatrix<f64>,
    /// `d × K`, columns `η̂_k`.
    pub h: DMatrix<f64>,
    /// Descending.
    pub correlations: Vec<f64>,
    /// Group-lasso coefficients `p × d`; empty for classical CCA.
    pub b: DMatrix<f64>,
    pub lambda: f64,
    /// Set when two retained correlations coincide, making the matching
    /// vectors identifiable only up to rotation.
    pub tied: bool,
}

impl CcaModel {
    pub fn k(&self) -> usize {
        self.correlations.len()
    }

    /// Row indices of `T` that are not identically zero.
    pub fn support(&self, zero_tol: f64) -> Vec<usize> {
        (0..self.t.nrows())
            .filter(|&i| self.t.row(i).iter().any(|v| v.abs() > zero_tol))
            .collect()
    }
}

/// `S^{-1/2}` through the eigendecomposition.
pub fn inv_sqrt_psd(s: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix is not square", s.nrows(), s.ncols())));
    }
    let scale = crate::linalg::max_abs(s).max(f64::MIN_POSITIVE);
    let asym = crate::linalg::max_asymmetry(s);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let (values, vectors) = sym_eigen(s)?;
    let top = values.first().copied().unwrap_or(0.0);
    let threshold = rel_tol * top;
    if let Some(&bad) = values.iter().find(|&&v| !(v > threshold)) {
        return Err(Error::RankDeficient {
            eigenvalue: bad,
            threshold,
        });
    }
    Ok(spectral_map(&values, &vectors, |v| 1.0 / v.sqrt()))
}

fn check_pair(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    if y.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} rows, X has {}",
            y.nrows(),
            x.nrows()
        )));
    }
    let (n, d, p) = (y.nrows(), y.ncols(), x.ncols());
    if d == 0 || n < 2 || d > p.min(n - 1) {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ d ≤ min(p, N−1); got d={d}, p={p}, N={n}"
        )));
    }
    Ok(())
}

/// Flip each pair so the largest-magnitude entry of `η̂_k` is positive.
fn align_signs(t: &mut DMatrix<f64>, h: &mut DMatrix<f64>) {
    for k in 0..h.ncols() {
        let mut best = 0.0f64;
        for v in h.column(k).iter() {
            if v.abs() > best.abs() {
                best = *v;
            }
        }
        if best < 0.0 {
            h.column_mut(k).neg_mut();
            t.column_mut(k).neg_mut();
        }
    }
}

fn has_ties(corr: &[f64]) -> bool {
    corr.windows(2).any(|w| (w[0] - w[1]).abs() <= TIE_TOL * w[0].abs())
}

/// Singular values (descending) and right singular vectors of an `N × d` matrix, `N > d`.
fn right_singular(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (_, values, vectors) = thin_svd(a)?;
    Ok((values, vectors))
}

/// Sparse CCA with `Σ̂_Y = YᵀY/N`.
pub fn sparse_cca(y: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64, opts: &SolverOptions) -> Result<CcaModel> {
    check_pair(y, x)?;
    sparse_cca_with_cov(y, x, &gram(y), lambda, opts)
}

/// Sparse CCA with a caller-supplied `Σ̂_Y`.
pub fn sparse_cca_with_cov(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<CcaModel> {
    check_pair(y, x)?;
    let d = y.ncols();
    if sigma_y.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "Σ_Y is {}x{}, expected {d}x{d}",
            sigma_y.nrows(),
            sigma_y.ncols()
        )));
    }
    let r = inv_sqrt_psd(sigma_y, DEFAULT_REL_TOL)?;
    let m = y * &r;
    let problem = GroupLasso::new(x, &m)?;
    let b = problem.solve(lambda, opts, None)?.coef;
    // right singular vectors of XB̂/√N; avoids squaring D before the rank cut
    let xb = x * &b / (x.nrows() as f64).sqrt();
    let (dvals, h_tilde) = right_singular(&xb)?;
    let k = if dvals[0] > 0.0 {
        dvals.iter().take_while(|&&v| v > RETAIN_TOL * dvals[0]).count()
    } else {
        0
    };
    if k == 0 {
        return Ok(CcaModel {
            t: DMatrix::zeros(x.ncols(), 0),
            h: DMatrix::zeros(d, 0),
            correlations: vec![],
            b,
            lambda,
            tied: false,
        });
    }
    let h_k = h_tilde.columns(0, k).into_owned();
    let mut t = &b * &h_k;
    for (j, &v) in dvals.iter().take(k).enumerate() {
        t.column_mut(j).scale_mut(1.0 / v);
    }
    let mut h = &r * &h_k;
    align_signs(&mut t, &mut h);
    let correlations = dvals[..k].to_vec();
    Ok(CcaModel {
        t,
        h,
        tied: has_ties(&correlations),
        correlations,
        b,
        lambda,
    })
}

/// Classical CCA via the SVD of `Σ_X^{-1/2} Σ_XY Σ_Y^{-1/2}` (second moments with `1/N`).
pub fn classical_cca(y: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<CcaModel> {
    check_pair(y, x)?;
    let n = y.nrows() as f64;
    if x.ncols() >= y.nrows() {
        return Err(Error::InvalidArgument("classical CCA needs N > p".into()));
    }
    let rx = inv_sqrt_psd(&gram(x), DEFAULT_REL_TOL)?;
    let ry = inv_sqrt_psd(&gram(y), DEFAULT_REL_TOL)?;
    let sxy = x.tr_mul(y) / n;
    let a = &rx * sxy * &ry;
    let (u, values, v) = thin_svd(&a)?;
    let d = values.len().min(y.ncols());
    let correlations: Vec<f64> = values[..d].to_vec();
    let u_sorted = u.columns(0, d).into_owned();
    let v_sorted = v.columns(0, d).into_owned();
    let mut t = rx * u_sorted;
    let mut h = ry * v_sorted;
    align_signs(&mut t, &mut h);
    Ok(CcaModel {
        t,
        h,
        tied: has_ties(&correlations),
        correlations,
        b: DMatrix::zeros(0, 0),
        lambda: 0.0,
    })
}
