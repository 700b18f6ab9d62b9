//! Affine-invariant geometry on the manifold of symmetric positive definite matrices.
//!
//! Tangent vectors at a point `P` are symmetric matrices, with inner product
//! `⟨W, Z⟩_P = tr(P⁻¹ W P⁻¹ Z)`. All maps are evaluated through the symmetric
//! eigendecomposition; matrix functions of SPD arguments refuse eigenvalues
//! below `1e-12` times the largest one instead of clamping them.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::linalg::{max_abs, max_asymmetry, spectral_map, sym_eigen, symmetrize, trace_product};
use crate::{Error, Result};

/// Relative symmetry tolerance applied at construction.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue ratio for matrix functions of SPD arguments.
pub const CONDITION_FLOOR: f64 = 1e-12;

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL * max_abs(a).max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// A symmetric positive definite matrix: a point of the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

/// A symmetric matrix: a tangent vector at some SPD point.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        check_square(&a)?;
        check_symmetric(&a)?;
        let a = symmetrize(&a);
        let (values, _) = sym_eigen(&a)?;
        let min = *values.last().unwrap();
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min,
                max_eigenvalue: values[0],
            });
        }
        Ok(SpdMatrix(a))
    }

    pub fn from_row_slice(m: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * m {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {m}x{m} matrix",
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(m, m, data))
    }

    pub fn identity(m: usize) -> Self {
        SpdMatrix(DMatrix::identity(m, m))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    /// Wraps a matrix already known to be SPD (results of Exp, congruences).
    pub(crate) fn from_trusted(a: DMatrix<f64>) -> Self {
        SpdMatrix(symmetrize(&a))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Square root, inverse square root and spectrum, bundled for repeated use.
    pub fn base_point(&self) -> Result<BasePoint> {
        BasePoint::new(self.clone())
    }
}

impl SymMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        check_square(&a)?;
        check_symmetric(&a)?;
        Ok(SymMatrix(symmetrize(&a)))
    }

    pub fn from_row_slice(m: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * m {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {m}x{m} matrix",
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(m, m, data))
    }

    pub fn zeros(m: usize) -> Self {
        SymMatrix(DMatrix::zeros(m, m))
    }

    pub fn identity(m: usize) -> Self {
        SymMatrix(DMatrix::identity(m, m))
    }

    pub(crate) fn from_trusted(a: DMatrix<f64>) -> Self {
        SymMatrix(symmetrize(&a))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Frobenius (Euclidean) inner product.
    pub fn frobenius_dot(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix(&self.0 * c)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &SymMatrix) {
        self.0 += &other.0 * c;
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, c: f64) -> SymMatrix {
        self.scale(c)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        self.scale(-1.0)
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{a}x{a} vs {b}x{b}")));
    }
    Ok(())
}

fn spd_spectrum(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (values, vectors) = sym_eigen(a)?;
    let max = values[0];
    let min = *values.last().unwrap();
    if !(max > 0.0) || min < CONDITION_FLOOR * max {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok((values, vectors))
}

/// An SPD point with its square root and inverse square root precomputed.
///
/// Every map at `P` is evaluated in whitened coordinates `P^{-1/2} · P^{-1/2}`.
#[derive(Debug, Clone)]
pub struct BasePoint {
    point: SpdMatrix,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl BasePoint {
    pub fn new(point: SpdMatrix) -> Result<Self> {
        let (values, vectors) = spd_spectrum(point.as_matrix())?;
        let sqrt = spectral_map(&values, &vectors, f64::sqrt);
        let inv_sqrt = spectral_map(&values, &vectors, |v| 1.0 / v.sqrt());
        Ok(BasePoint {
            point,
            sqrt,
            inv_sqrt,
        })
    }

    pub fn point(&self) -> &SpdMatrix {
        &self.point
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    pub fn dim(&self) -> usize {
        self.point.dim()
    }

    /// `P^{-1/2} A P^{-1/2}`.
    pub fn whiten(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(&self.inv_sqrt * a * &self.inv_sqrt))
    }

    /// `P^{1/2} A P^{1/2}`.
    pub fn unwhiten(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(&self.sqrt * a * &self.sqrt))
    }

    pub fn inner(&self, w: &SymMatrix, z: &SymMatrix) -> Result<f64> {
        check_dims(self.dim(), w.dim())?;
        check_dims(self.dim(), z.dim())?;
        let a = &self.inv_sqrt * w.as_matrix() * &self.inv_sqrt;
        let b = &self.inv_sqrt * z.as_matrix() * &self.inv_sqrt;
        Ok(trace_product(&a, &b))
    }

    pub fn norm(&self, w: &SymMatrix) -> Result<f64> {
        Ok(self.inner(w, w)?.max(0.0).sqrt())
    }

    pub fn exp(&self, w: &SymMatrix) -> Result<SpdMatrix> {
        check_dims(self.dim(), w.dim())?;
        let (values, vectors) = sym_eigen(&self.whiten(w.as_matrix()))?;
        let inner = spectral_map(&values, &vectors, f64::exp);
        Ok(SpdMatrix::from_trusted(self.unwhiten(&inner)))
    }

    /// Log in whitened coordinates, `log(P^{-1/2} Q P^{-1/2})`.
    pub fn log_whitened(&self, q: &SpdMatrix) -> Result<DMatrix<f64>> {
        check_dims(self.dim(), q.dim())?;
        let (values, vectors) = spd_spectrum(&self.whiten(q.as_matrix()))?;
        Ok(spectral_map(&values, &vectors, f64::ln))
    }

    pub fn log(&self, q: &SpdMatrix) -> Result<SymMatrix> {
        let inner = self.log_whitened(q)?;
        Ok(SymMatrix::from_trusted(self.unwhiten(&inner)))
    }

    pub fn dist(&self, q: &SpdMatrix) -> Result<f64> {
        check_dims(self.dim(), q.dim())?;
        let (values, _) = spd_spectrum(&self.whiten(q.as_matrix()))?;
        Ok(values.iter().map(|v| v.ln().powi(2)).sum::<f64>().sqrt())
    }

    /// The transport matrix `E = P^{1/2} (P^{-1/2} Q P^{-1/2})^{1/2} P^{-1/2}`,
    /// i.e. `(Q P⁻¹)^{1/2}`.
    pub fn transport_matrix(&self, q: &SpdMatrix) -> Result<DMatrix<f64>> {
        check_dims(self.dim(), q.dim())?;
        let (values, vectors) = spd_spectrum(&self.whiten(q.as_matrix()))?;
        let root = spectral_map(&values, &vectors, f64::sqrt);
        Ok(&self.sqrt * root * &self.inv_sqrt)
    }

    /// Parallel transport of `w` from this point to `q` along the geodesic.
    pub fn transport(&self, q: &SpdMatrix, w: &SymMatrix) -> Result<SymMatrix> {
        check_dims(self.dim(), w.dim())?;
        let e = self.transport_matrix(q)?;
        Ok(SymMatrix::from_trusted(&e * w.as_matrix() * e.transpose()))
    }
}

/// `⟨W, Z⟩_P = tr(P⁻¹ W P⁻¹ Z)`.
pub fn riem_inner(p: &SpdMatrix, w: &SymMatrix, z: &SymMatrix) -> Result<f64> {
    p.base_point()?.inner(w, z)
}

pub fn riem_norm(p: &SpdMatrix, w: &SymMatrix) -> Result<f64> {
    p.base_point()?.norm(w)
}

/// `Exp_P(W) = P^{1/2} exp(P^{-1/2} W P^{-1/2}) P^{1/2}`.
pub fn riem_exp(p: &SpdMatrix, w: &SymMatrix) -> Result<SpdMatrix> {
    p.base_point()?.exp(w)
}

/// `Log_P(Q) = P^{1/2} log(P^{-1/2} Q P^{-1/2}) P^{1/2}`.
pub fn riem_log(p: &SpdMatrix, q: &SpdMatrix) -> Result<SymMatrix> {
    p.base_point()?.log(q)
}

/// `d(P, Q) = ‖log(P^{-1/2} Q P^{-1/2})‖_F`.
pub fn riem_dist(p: &SpdMatrix, q: &SpdMatrix) -> Result<f64> {
    p.base_point()?.dist(q)
}

/// Parallel transport `Γ_{P→Q}(W) = E W Eᵀ` with `E = (Q P⁻¹)^{1/2}`.
pub fn parallel_transport(p: &SpdMatrix, q: &SpdMatrix, w: &SymMatrix) -> Result<SymMatrix> {
    p.base_point()?.transport(q, w)
}

#[derive(Debug, Clone, Copy)]
pub struct FrechetOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FrechetOptions {
    fn default() -> Self {
        FrechetOptions {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// Sample Fréchet mean by the fixed-point iteration
/// `μ ← Exp_μ(α · mean_i Log_μ y_i)`, started from the arithmetic mean.
///
/// The step `α = 2 / mean_i h(κ_i)`, with `h(κ) = (κ+1)/(κ−1)·ln κ` and `κ_i`
/// the condition number of `μ^{-1/2} y_i μ^{-1/2}`, bounds the local curvature
/// of the Fréchet function; it tends to 1 for concentrated samples and keeps
/// widely spread ones from oscillating.
///
/// On success the mean of `Log_μ y_i` has `⟨·,·⟩_μ` norm at most `opts.tol`.
pub fn frechet_mean(points: &[SpdMatrix], opts: FrechetOptions) -> Result<SpdMatrix> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidArgument("Fréchet mean of an empty set".into()))?;
    let m = first.dim();
    for p in points {
        check_dims(m, p.dim())?;
    }
    let n = points.len() as f64;
    let mut sum = DMatrix::zeros(m, m);
    for p in points {
        sum += p.as_matrix();
    }
    let mut mu = SpdMatrix::from_trusted(sum / n);
    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_iter {
        let base = BasePoint::new(mu.clone())?;
        let mut mean_log = DMatrix::zeros(m, m);
        let mut curvature = 0.0;
        for p in points {
            let (values, vectors) = spd_spectrum(&base.whiten(p.as_matrix()))?;
            mean_log += spectral_map(&values, &vectors, f64::ln);
            let kappa = values[0] / values[values.len() - 1];
            curvature += if kappa - 1.0 < 1e-8 {
                2.0
            } else {
                (kappa + 1.0) / (kappa - 1.0) * kappa.ln()
            };
        }
        mean_log /= n;
        // the whitened Frobenius norm is the ⟨·,·⟩_μ norm
        residual = mean_log.norm();
        if residual <= opts.tol {
            return Ok(mu);
        }
        let step = 2.0 * n / curvature;
        let (values, vectors) = sym_eigen(&(mean_log * step))?;
        mu = SpdMatrix::from_trusted(base.unwhiten(&spectral_map(&values, &vectors, f64::exp)));
    }
    Err(Error::NoConvergence {
        what: "Fréchet mean",
        iterations: opts.max_iter,
        residual,
        last_iterate: Box::new(mu.into_inner()),
    })
}
