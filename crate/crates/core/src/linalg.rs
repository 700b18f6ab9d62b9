//! Small dense linear-algebra helpers shared by the geometry and estimation code.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

const EIGEN_MAX_ITER: usize = 100_000;

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
/// Columns of the returned matrix are the matching unit eigenvectors.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let eig = symmetrize(a)
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::NoConvergence {
            what: "symmetric eigendecomposition",
            iterations: EIGEN_MAX_ITER,
            residual: f64::NAN,
            last_iterate: Box::new(a.clone()),
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the solver's order for exact ties
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Thin SVD `A = U diag(s) Vᵀ` with `s` descending; `U` is r×k and `V` is c×k, `k = min(r, c)`.
/// nalgebra's bidiagonal SVD can return wrong factors for exactly rank-deficient input,
/// which sparse CCA produces routinely, so this goes through faer.
pub fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (r, c) = a.shape();
    let k = r.min(c);
    if k == 0 {
        return Ok((DMatrix::zeros(r, 0), Vec::new(), DMatrix::zeros(c, 0)));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("SVD of a matrix with non-finite entries".into()));
    }
    let svd = faer::Mat::<f64>::from_fn(r, c, |i, j| a[(i, j)])
        .thin_svd()
        .map_err(|_| Error::NoConvergence {
            what: "singular value decomposition",
            iterations: 0,
            residual: f64::NAN,
            last_iterate: Box::new(a.clone()),
        })?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let values = order.iter().map(|&i| s[i]).collect();
    let left = DMatrix::from_fn(r, k, |i, l| u[(i, order[l])]);
    let right = DMatrix::from_fn(c, k, |j, l| v[(j, order[l])]);
    Ok((left, values, right))
}

/// `V diag(f(λ)) Vᵀ`, re-symmetrized.
pub fn spectral_map(values: &[f64], vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        let fv = f(v);
        scaled.column_mut(j).scale_mut(fv);
    }
    symmetrize(&(scaled * vectors.transpose()))
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Trace of `a * b` without forming the product.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Subtracts `means` from every row.
pub fn center_columns(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Per-column standard deviation with the 1/N convention.
pub fn column_sds(x: &DMatrix<f64>) -> DVector<f64> {
    let means = column_means(x);
    let n = x.nrows() as f64;
    DVector::from_iterator(
        x.ncols(),
        x.column_iter()
            .enumerate()
            .map(|(j, c)| (c.iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / n).sqrt()),
    )
}

/// `XᵀX / N`.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(x.tr_mul(x) / x.nrows() as f64))
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "correlation of samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two observations".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale_a = saa.sqrt();
    let scale_b = sbb.sqrt();
    if scale_a <= 1e-300 || scale_b <= 1e-300 {
        return Err(Error::ZeroVariance("correlation of a constant projection".into()));
    }
    Ok(sab / (scale_a * scale_b))
}

/// Largest eigenvalue of a symmetric PSD matrix.
pub fn spectral_norm_sym(a: &DMatrix<f64>) -> Result<f64> {
    let (values, _) = sym_eigen(a)?;
    Ok(values.first().copied().unwrap_or(0.0).max(0.0))
}
