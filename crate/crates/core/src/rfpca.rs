//! Intrinsic Riemannian functional PCA.
//!
//! Curves are centered at their pointwise Fréchet mean `μ̂`, mapped to the
//! tangent bundle with `Log_μ̂`, and expressed in the orthonormal frame
//! `E_k(μ̂(t))`. Multivariate FPCA of the resulting `L × M` coefficient curves
//! gives the principal component fields `φ̂_j = Σ_k π̂_jk E_k(μ̂)`.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::field::{SpdCurve, TangentField, TimeGrid};
use crate::linalg::{gram, sym_eigen};
use crate::spd::{frechet_mean, BasePoint, FrechetOptions, SpdMatrix, SymMatrix};
use crate::{Error, Result};

/// Number of frame elements for `m × m` matrices, `m(m+1)/2`.
pub fn frame_size(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Index pairs `(i, j)` in frame order: diagonal entries first, then `i < j`
/// in row-major order.
pub fn frame_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..m).map(|i| (i, i)).collect();
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Fréchet mean computed separately at every grid point.
pub fn frechet_mean_curve(curves: &[SpdCurve], opts: FrechetOptions) -> Result<SpdCurve> {
    let first = check_curves(curves)?;
    let len = first.len();
    let values = (0..len)
        .into_par_iter()
        .map(|l| {
            let pts: Vec<SpdMatrix> = curves.iter().map(|c| c.value(l).clone()).collect();
            frechet_mean(&pts, opts).map_err(|e| Error::AtTime {
                index: l,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SpdCurve::new(first.grid().clone(), values)
}

fn check_curves(curves: &[SpdCurve]) -> Result<&SpdCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves given".into()))?;
    for (i, c) in curves.iter().enumerate() {
        if c.grid() != first.grid() || c.dim() != first.dim() {
            return Err(Error::DimensionMismatch(format!(
                "curve {i} does not share the grid and matrix size of curve 0"
            )));
        }
    }
    Ok(first)
}

/// Orthonormal frame of `T_F M` under the affine-invariant metric:
/// `E_ii = (F^{1/2}e_i)(F^{1/2}e_i)ᵀ` and
/// `E_ij = ((F^{1/2}e_i)(F^{1/2}e_j)ᵀ + (F^{1/2}e_j)(F^{1/2}e_i)ᵀ)/√2`.
pub fn frame_at(f: &SpdMatrix) -> Result<Vec<SymMatrix>> {
    Ok(frame_at_base(&f.base_point()?))
}

pub fn frame_at_base(base: &BasePoint) -> Vec<SymMatrix> {
    let s = base.sqrt();
    frame_pairs(base.dim())
        .into_iter()
        .map(|(i, j)| {
            let (ci, cj) = (s.column(i), s.column(j));
            let outer = &ci * cj.transpose();
            if i == j {
                SymMatrix::from_trusted(outer)
            } else {
                SymMatrix::from_trusted((&outer + outer.transpose()) / SQRT_2)
            }
        })
        .collect()
}

/// Frame coordinates of a whitened tangent vector `A = F^{-1/2} V F^{-1/2}`.
///
/// Since `E_k(F) = F^{1/2} E_k(I) F^{1/2}`, `⟨V, E_k(F)⟩_F = ⟨A, E_k(I)⟩_Frobenius`.
pub(crate) fn whitened_coordinates(a: &DMatrix<f64>, out: &mut [f64]) {
    for (k, (i, j)) in frame_pairs(a.nrows()).into_iter().enumerate() {
        out[k] = if i == j { a[(i, i)] } else { SQRT_2 * a[(i, j)] };
    }
}

pub(crate) fn from_whitened_coordinates(z: &[f64], m: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(m, m);
    for (k, (i, j)) in frame_pairs(m).into_iter().enumerate() {
        if i == j {
            a[(i, i)] = z[k];
        } else {
            a[(i, j)] = z[k] / SQRT_2;
            a[(j, i)] = z[k] / SQRT_2;
        }
    }
    a
}

/// Coefficients `Z[l, k] = ⟨V(t_l), E_k(μ(t_l))⟩_{μ(t_l)}` of a field along its base.
pub fn coefficients(v: &TangentField) -> DMatrix<f64> {
    let base = v.base();
    let m = base.dim();
    let mm = frame_size(m);
    let mut z = DMatrix::zeros(base.len(), mm);
    let mut row = vec![0.0; mm];
    for (l, bp) in base.base_points().iter().enumerate() {
        whitened_coordinates(&bp.whiten(v.value(l).as_matrix()), &mut row);
        for k in 0..mm {
            z[(l, k)] = row[k];
        }
    }
    z
}

/// Inverse of [`coefficients`]: `V(t_l) = Σ_k Z[l, k] E_k(μ(t_l))`.
pub fn field_from_coefficients(base: &Arc<SpdCurve>, z: &DMatrix<f64>) -> Result<TangentField> {
    let m = base.dim();
    if z.nrows() != base.len() || z.ncols() != frame_size(m) {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{}, expected {}x{}",
            z.nrows(),
            z.ncols(),
            base.len(),
            frame_size(m)
        )));
    }
    let values = base
        .base_points()
        .iter()
        .enumerate()
        .map(|(l, bp)| {
            let row: Vec<f64> = z.row(l).iter().copied().collect();
            SymMatrix::from_trusted(bp.unwhiten(&from_whitened_coordinates(&row, m)))
        })
        .collect();
    TangentField::new(base.clone(), values)
}

/// Result of multivariate FPCA on `L × M` coefficient curves.
#[derive(Debug, Clone)]
pub struct Mfpca {
    /// Sample mean of the coefficient curves (`L × M`).
    pub mean: DMatrix<f64>,
    /// `π̂_j`, orthonormal under `Σ_l w_l π_j(t_l)ᵀ π_k(t_l)`.
    pub components: Vec<DMatrix<f64>>,
    /// Descending, positive.
    pub eigenvalues: Vec<f64>,
    /// `N × d` centered scores.
    pub scores: DMatrix<f64>,
}

/// Below this (times the mean squared coefficient norm) the covariance is treated as zero.
const ZERO_VARIANCE_FLOOR: f64 = 1e-20;
/// Retained eigenvalues must exceed this fraction of the leading one.
const RANK_FLOOR: f64 = 1e-12;

/// Multivariate FPCA of coefficient curves observed on `grid`.
///
/// The covariance is `(1/N) Σ_i z̃_i z̃_iᵀ` for centered, `√w`-weighted,
/// flattened curves `z̃_i`; it is diagonalized directly, or through the
/// `N × N` Gram matrix when that is smaller.
pub fn mfpca(z_all: &[DMatrix<f64>], d: usize, grid: &TimeGrid) -> Result<Mfpca> {
    let n = z_all.len();
    let first = z_all
        .first()
        .ok_or_else(|| Error::InvalidArgument("no coefficient curves".into()))?;
    let (len, mm) = first.shape();
    if len != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient curves have {len} rows on a grid of {} points",
            grid.len()
        )));
    }
    if z_all.iter().any(|z| z.shape() != (len, mm)) {
        return Err(Error::DimensionMismatch("coefficient curves differ in shape".into()));
    }
    let dim = len * mm;
    if d == 0 || n < 2 || d > (n - 1).min(dim) {
        return Err(Error::InvalidArgument(format!(
            "cannot extract {d} components from {n} curves of dimension {dim}"
        )));
    }
    let root_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut data = DMatrix::zeros(n, dim);
    for (i, z) in z_all.iter().enumerate() {
        for l in 0..len {
            for k in 0..mm {
                data[(i, l * mm + k)] = root_w[l] * z[(l, k)];
            }
        }
    }
    let raw_scale = data.norm_squared() / n as f64;
    let mean_flat: DVector<f64> = crate::linalg::column_means(&data);
    let centered = crate::linalg::center_columns(&data, &mean_flat);

    let (values, directions) = if n < dim {
        let g = crate::linalg::symmetrize(&(&centered * centered.transpose() / n as f64));
        let (vals, vecs) = sym_eigen(&g)?;
        let mut dirs = DMatrix::zeros(dim, d);
        for j in 0..d {
            if vals[j] > 0.0 {
                let u = centered.tr_mul(&vecs.column(j).into_owned()) / (n as f64 * vals[j]).sqrt();
                dirs.set_column(j, &u);
            }
        }
        (vals, dirs)
    } else {
        let (vals, vecs) = sym_eigen(&gram(&centered))?;
        (vals, vecs.columns(0, d).into_owned())
    };

    let lead = values[0];
    if !(lead > ZERO_VARIANCE_FLOOR * (1.0 + raw_scale)) {
        return Err(Error::ZeroVariance(
            "covariance of the tangent representations is zero".into(),
        ));
    }
    for &v in values.iter().take(d) {
        if !(v > RANK_FLOOR * lead) {
            return Err(Error::RankDeficient {
                eigenvalue: v,
                threshold: RANK_FLOOR * lead,
            });
        }
    }

    let mut components = Vec::with_capacity(d);
    let mut dirs = directions;
    for j in 0..d {
        // sign: largest |entry| of π̂_j positive, first index wins ties
        let mut best = (0usize, 0.0f64);
        let mut pi = DMatrix::zeros(len, mm);
        for l in 0..len {
            for k in 0..mm {
                let v = dirs[(l * mm + k, j)] / root_w[l];
                pi[(l, k)] = v;
                if v.abs() > best.1.abs() {
                    best = (l * mm + k, v);
                }
            }
        }
        if best.1 < 0.0 {
            pi *= -1.0;
            dirs.column_mut(j).scale_mut(-1.0);
        }
        components.push(pi);
    }
    let scores = &centered * &dirs;
    let mut mean = DMatrix::zeros(len, mm);
    for l in 0..len {
        for k in 0..mm {
            mean[(l, k)] = mean_flat[l * mm + k] / root_w[l];
        }
    }
    Ok(Mfpca {
        mean,
        components,
        eigenvalues: values[..d].to_vec(),
        scores,
    })
}

/// Estimated mean curve, principal component fields and eigenvalues.
#[derive(Debug, Clone)]
pub struct RfpcaBasis {
    pub mean_curve: Arc<SpdCurve>,
    pub components: Vec<TangentField>,
    pub eigenvalues: Vec<f64>,
    /// Frame coefficients `π̂_j` of each component (`L × M`).
    pub coefficient_components: Vec<DMatrix<f64>>,
    /// Mean of the training coefficient curves, subtracted before projecting.
    pub coefficient_mean: DMatrix<f64>,
}

/// PC scores `Ŷ_ij`, one row per curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub DMatrix<f64>);

impl ScoreMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Coefficient curves of `Log_μ y_i` for every curve, computed in parallel.
pub fn log_coefficients(mean: &SpdCurve, curves: &[SpdCurve]) -> Result<Vec<DMatrix<f64>>> {
    let m = mean.dim();
    let mm = frame_size(m);
    for (i, c) in curves.iter().enumerate() {
        if c.grid() != mean.grid() || c.dim() != m {
            return Err(Error::DimensionMismatch(format!(
                "curve {i} does not share the grid and matrix size of the mean curve"
            )));
        }
    }
    curves
        .par_iter()
        .map(|c| {
            let mut z = DMatrix::zeros(mean.len(), mm);
            let mut row = vec![0.0; mm];
            for (l, bp) in mean.base_points().iter().enumerate() {
                let a = bp.log_whitened(c.value(l)).map_err(|e| Error::AtTime {
                    index: l,
                    source: Box::new(e),
                })?;
                whitened_coordinates(&a, &mut row);
                for k in 0..mm {
                    z[(l, k)] = row[k];
                }
            }
            Ok(z)
        })
        .collect()
}

/// RFPCA with the pointwise Fréchet mean.
pub fn rfpca_fit(curves: &[SpdCurve], d: usize) -> Result<(RfpcaBasis, ScoreMatrix)> {
    check_curves(curves)?;
    if curves.len() < 2 {
        return Err(Error::InvalidArgument("RFPCA needs at least two curves".into()));
    }
    let mean = frechet_mean_curve(curves, FrechetOptions::default())?;
    rfpca_fit_with_mean(curves, Arc::new(mean), d)
}

/// RFPCA around a given mean curve.
pub fn rfpca_fit_with_mean(
    curves: &[SpdCurve],
    mean: Arc<SpdCurve>,
    d: usize,
) -> Result<(RfpcaBasis, ScoreMatrix)> {
    let z = log_coefficients(&mean, curves)?;
    let fit = mfpca(&z, d, mean.grid())?;
    let components = fit
        .components
        .iter()
        .map(|pi| field_from_coefficients(&mean, pi))
        .collect::<Result<Vec<_>>>()?;
    let basis = RfpcaBasis {
        mean_curve: mean,
        components,
        eigenvalues: fit.eigenvalues,
        coefficient_components: fit.components,
        coefficient_mean: fit.mean,
    };
    Ok((basis, ScoreMatrix(fit.scores)))
}

impl RfpcaBasis {
    pub fn rank(&self) -> usize {
        self.components.len()
    }

    /// Scores of new curves, centered with the training coefficient mean.
    pub fn project(&self, curves: &[SpdCurve]) -> Result<DMatrix<f64>> {
        let z = log_coefficients(&self.mean_curve, curves)?;
        let weights = self.mean_curve.grid().weights();
        let mut out = DMatrix::zeros(curves.len(), self.rank());
        for (i, zi) in z.iter().enumerate() {
            let centered = zi - &self.coefficient_mean;
            for (j, pi) in self.coefficient_components.iter().enumerate() {
                let mut acc = 0.0;
                for (l, w) in weights.iter().enumerate() {
                    acc += w * centered.row(l).dot(&pi.row(l));
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }

    /// `Σ_j c_j φ̂_j`.
    pub fn combine(&self, coefs: &[f64]) -> Result<TangentField> {
        if coefs.len() != self.rank() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                coefs.len(),
                self.rank()
            )));
        }
        let mut out = TangentField::zeros(self.mean_curve.clone());
        for (c, phi) in coefs.iter().zip(&self.components) {
            out.axpy(*c, phi)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{exp_curve, field_inner, log_curve};
    use crate::spd::testutil::*;
    use crate::spd::riem_inner;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn frame_at_identity() {
        let f = frame_at(&SpdMatrix::identity(2)).unwrap();
        assert_eq!(f.len(), 3);
        let e = |r: &[f64]| DMatrix::from_row_slice(2, 2, r);
        assert_eq!(f[0].as_matrix(), &e(&[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(f[1].as_matrix(), &e(&[0.0, 0.0, 0.0, 1.0]));
        assert!((f[2].as_matrix() - e(&[0.0, 1.0, 1.0, 0.0]) / SQRT_2).abs().max() < 1e-16);
    }

    #[test]
    fn frame_is_orthonormal() {
        let mut r = rng(20);
        for m in [1, 2, 3, 5] {
            let f = random_spd(&mut r, m, 0.7);
            let frame = frame_at(&f).unwrap();
            assert_eq!(frame.len(), m * (m + 1) / 2);
            for (a, ea) in frame.iter().enumerate() {
                for (b, eb) in frame.iter().enumerate() {
                    let g = riem_inner(&f, ea, eb).unwrap();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((g - want).abs() <= 1e-10, "m={m} ({a},{b}) {g}");
                }
            }
        }
    }

    fn random_curve(r: &mut impl Rng, grid: &TimeGrid, m: usize) -> Arc<SpdCurve> {
        Arc::new(SpdCurve::new(grid.clone(), (0..grid.len()).map(|_| random_spd(r, m, 0.5)).collect()).unwrap())
    }

    #[test]
    fn coefficients_match_frame_inner_products_and_reconstruct() {
        let grid = TimeGrid::uniform(0.0, 1.0, 6).unwrap();
        let mut r = rng(21);
        let mu = random_curve(&mut r, &grid, 3);
        let v = TangentField::new(mu.clone(), (0..6).map(|_| random_sym(&mut r, 3, 1.0)).collect()).unwrap();
        let z = coefficients(&v);
        for l in 0..6 {
            let frame = frame_at(mu.value(l)).unwrap();
            for (k, e) in frame.iter().enumerate() {
                let direct = riem_inner(mu.value(l), v.value(l), e).unwrap();
                assert!((z[(l, k)] - direct).abs() < 1e-10);
            }
        }
        let back = field_from_coefficients(&mu, &z).unwrap();
        for (a, b) in back.values().iter().zip(v.values()) {
            assert!((a.as_matrix() - b.as_matrix()).abs().max() < 1e-9);
        }
        assert_eq!(coefficients(&TangentField::zeros(mu.clone())), DMatrix::zeros(6, 6));

        let e1 = TangentField::new(
            mu.clone(),
            (0..6).map(|l| frame_at(mu.value(l)).unwrap()[0].clone()).collect(),
        )
        .unwrap();
        let z = coefficients(&e1);
        for l in 0..6 {
            assert!((z[(l, 0)] - 1.0).abs() < 1e-12);
            for k in 1..6 {
                assert!(z[(l, k)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mfpca_rank_one_recovery() {
        let grid = TimeGrid::uniform(-1.0, 1.0, 7).unwrap();
        let mut r = rng(22);
        // π normalized in the weighted inner product
        let mut pi = DMatrix::from_fn(7, 3, |_, _| r.sample::<f64, _>(StandardNormal));
        let norm: f64 = (0..7).map(|l| grid.weights()[l] * pi.row(l).norm_squared()).sum::<f64>().sqrt();
        pi /= norm;
        let s: Vec<f64> = (0..40).map(|_| 2.0 * r.sample::<f64, _>(StandardNormal)).collect();
        let z: Vec<DMatrix<f64>> = s.iter().map(|si| &pi * *si).collect();
        let fit = mfpca(&z, 1, &grid).unwrap();
        let mean_s = s.iter().sum::<f64>() / 40.0;
        let var_s = s.iter().map(|v| (v - mean_s).powi(2)).sum::<f64>() / 40.0;
        assert!((fit.eigenvalues[0] - var_s).abs() < 1e-8 * var_s.max(1.0));
        let sign = if (&fit.components[0] - &pi).abs().max() < 1e-6 { 1.0 } else { -1.0 };
        assert!((&fit.components[0] - &pi * sign).abs().max() < 1e-8);
    }

    fn generic_coefficients(seed: u64, n: usize, len: usize, mm: usize) -> Vec<DMatrix<f64>> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| DMatrix::from_fn(len, mm, |_, _| r.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    #[test]
    fn mfpca_eigenvalues_match_dense_weighted_covariance() {
        let grid = TimeGrid::new(vec![0.0, 0.3, 0.5, 1.2, 1.3]).unwrap();
        for n in [8usize, 40] {
            let z = generic_coefficients(23 + n as u64, n, 5, 3);
            let d = 5.min(n - 1);
            let fit = mfpca(&z, d, &grid).unwrap();
            // oracle: weighted covariance of the raw coefficients, (L·M)×(L·M)
            let mut cov = DMatrix::<f64>::zeros(15, 15);
            let mut mean = DMatrix::<f64>::zeros(5, 3);
            for zi in &z {
                mean += zi;
            }
            mean /= n as f64;
            for zi in &z {
                let c = zi - &mean;
                let v = DVector::from_fn(15, |idx, _| grid.weights()[idx / 3].sqrt() * c[(idx / 3, idx % 3)]);
                cov += &v * v.transpose();
            }
            cov /= n as f64;
            let mut ev: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            for j in 0..d {
                assert!((fit.eigenvalues[j] - ev[j]).abs() < 1e-10 * ev[0], "n={n} j={j}");
            }
            // orthonormality of π̂ and score variances
            for a in 0..d {
                for b in 0..d {
                    let ip: f64 = (0..5)
                        .map(|l| grid.weights()[l] * fit.components[a].row(l).dot(&fit.components[b].row(l)))
                        .sum();
                    assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
                }
                let col = fit.scores.column(a);
                assert!(col.mean().abs() < 1e-10);
                let var = col.norm_squared() / n as f64;
                assert!((var - fit.eigenvalues[a]).abs() < 1e-9 * fit.eigenvalues[a]);
            }
        }
    }

    #[test]
    fn mfpca_full_rank_positive_and_errors() {
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let z = generic_coefficients(30, 6, 4, 3);
        let fit = mfpca(&z, 5, &grid).unwrap();
        assert!(fit.eigenvalues.iter().all(|&v| v > 0.0));
        assert!(fit.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(mfpca(&z, 6, &grid).is_err());
        assert!(mfpca(&z, 0, &grid).is_err());
        let same = vec![z[0].clone(); 5];
        assert!(matches!(mfpca(&same, 1, &grid), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn mfpca_sign_convention() {
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let z = generic_coefficients(31, 12, 4, 3);
        let fit = mfpca(&z, 3, &grid).unwrap();
        for pi in &fit.components {
            let (mut best, mut idx) = (0.0f64, 0);
            for (i, v) in pi.transpose().iter().enumerate() {
                if v.abs() > best.abs() {
                    best = *v;
                    idx = i;
                }
            }
            assert!(best > 0.0, "entry {idx}");
        }
    }

    #[test]
    fn scores_do_not_depend_on_frame() {
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let z = generic_coefficients(32, 30, 5, 6);
        let mut r = rng(33);
        let rotations: Vec<DMatrix<f64>> = (0..5).map(|_| gaussian_matrix(&mut r, 6, 6).qr().q()).collect();
        let rotated: Vec<DMatrix<f64>> = z
            .iter()
            .map(|zi| {
                let mut out = zi.clone();
                for l in 0..5 {
                    let row = &rotations[l] * zi.row(l).transpose();
                    out.set_row(l, &row.transpose());
                }
                out
            })
            .collect();
        let a = mfpca(&z, 4, &grid).unwrap();
        let b = mfpca(&rotated, 4, &grid).unwrap();
        for j in 0..4 {
            let ca = a.scores.column(j);
            let cb = b.scores.column(j);
            let s = if ca.dot(&cb) >= 0.0 { 1.0 } else { -1.0 };
            assert!((ca - cb * s).abs().max() < 1e-8);
        }
    }

    fn synthetic_curves(seed: u64, n: usize) -> (Arc<SpdCurve>, Vec<TangentField>, Vec<SpdCurve>, DMatrix<f64>) {
        let grid = TimeGrid::uniform(-1.0, 1.0, 15).unwrap();
        let mut r = rng(seed);
        let mu = random_curve(&mut r, &grid, 2);
        // two orthonormal fields: distinct frame elements times normalized constants / linear terms
        let c0 = (1.0 / grid.span()).sqrt();
        let lin_norm: f64 = grid.points().iter().zip(grid.weights()).map(|(t, w)| w * t * t).sum::<f64>().sqrt();
        let phis: Vec<TangentField> = vec![
            TangentField::new(
                mu.clone(),
                (0..15).map(|l| frame_at(mu.value(l)).unwrap()[0].scale(c0)).collect(),
            )
            .unwrap(),
            TangentField::new(
                mu.clone(),
                (0..15)
                    .map(|l| frame_at(mu.value(l)).unwrap()[2].scale(grid.points()[l] / lin_norm))
                    .collect(),
            )
            .unwrap(),
        ];
        let sd = [1.0, 0.4];
        let scores = DMatrix::from_fn(n, 2, |_, j| sd[j] * r.sample::<f64, _>(StandardNormal));
        let curves = (0..n)
            .map(|i| {
                let mut v = TangentField::zeros(mu.clone());
                for j in 0..2 {
                    v.axpy(scores[(i, j)], &phis[j]).unwrap();
                }
                exp_curve(&v).unwrap()
            })
            .collect();
        (mu, phis, curves, scores)
    }

    #[test]
    fn rfpca_recovers_planted_components() {
        let (mu, phis, curves, _) = synthetic_curves(40, 300);
        let (basis, scores) = rfpca_fit(&curves, 2).unwrap();
        for j in 0..2 {
            let transported = crate::field::transport_field(&basis.components[j], &mu).unwrap();
            let align = field_inner(&transported, &phis[j]).unwrap().abs();
            assert!(align > 0.99, "component {j}: {align}");
        }
        // basis orthonormal, scores centered with variances ω̂
        for a in 0..2 {
            for b in 0..2 {
                let ip = field_inner(&basis.components[a], &basis.components[b]).unwrap();
                assert!((ip - if a == b { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
            let col = scores.0.column(a);
            assert!(col.mean().abs() <= 1e-8 * (col.norm_squared() / 300.0).sqrt());
            let var = col.norm_squared() / 300.0;
            assert!((var - basis.eigenvalues[a]).abs() <= 1e-6 * basis.eigenvalues[a]);
        }
        let cross = scores.0.column(0).dot(&scores.0.column(1)) / 300.0;
        assert!(cross.abs() <= 1e-6 * basis.eigenvalues[0]);
    }

    #[test]
    fn scores_are_tangent_inner_products() {
        let (_, _, curves, _) = synthetic_curves(41, 50);
        let (basis, scores) = rfpca_fit(&curves, 2).unwrap();
        let mu = &basis.mean_curve;
        for i in [0usize, 7, 33] {
            let v = log_curve(mu, &curves[i]).unwrap();
            for j in 0..2 {
                let direct = field_inner(&v, &basis.components[j]).unwrap();
                // centering moves scores by at most the Fréchet residual
                assert!((direct - scores.0[(i, j)]).abs() < 1e-8);
            }
        }
        let projected = basis.project(&curves).unwrap();
        assert!((projected - &scores.0).abs().max() < 1e-10);
    }

    #[test]
    fn known_mean_and_basis_give_planted_scores() {
        let (mu, phis, curves, planted) = synthetic_curves(42, 20);
        for (i, c) in curves.iter().enumerate() {
            let v = log_curve(&mu, c).unwrap();
            for j in 0..2 {
                assert!((field_inner(&v, &phis[j]).unwrap() - planted[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn full_rank_projection_reconstructs_fields() {
        let (mu, _, curves, _) = synthetic_curves(43, 30);
        let (basis, scores) = rfpca_fit_with_mean(&curves, mu.clone(), 2).unwrap();
        let v = log_curve(&mu, &curves[3]).unwrap();
        let mut rebuilt = basis.combine(&[scores.0[(3, 0)], scores.0[(3, 1)]]).unwrap();
        rebuilt.axpy(1.0, &field_from_coefficients(&mu, &basis.coefficient_mean).unwrap()).unwrap();
        let err = crate::field::field_norm(&v.sub(&rebuilt).unwrap()).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn degenerate_inputs() {
        let (_, _, curves, _) = synthetic_curves(44, 5);
        let same = vec![curves[0].clone(); 4];
        assert!(matches!(rfpca_fit(&same, 1), Err(Error::ZeroVariance(_))));
        assert!(rfpca_fit(&curves[..1], 1).is_err());
        let mean = frechet_mean_curve(&curves[..1], FrechetOptions::default()).unwrap();
        assert_eq!(mean, curves[0]);
        let mean = frechet_mean_curve(&same, FrechetOptions::default()).unwrap();
        for (a, b) in mean.values().zip(curves[0].values()) {
            assert!((a.as_matrix() - b.as_matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn commuting_curves_mean_is_log_average() {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let mut r = rng(45);
        let q = gaussian_matrix(&mut r, 3, 3).qr().q();
        let mut logs = vec![vec![]; 3];
        let curves: Vec<SpdCurve> = (0..5)
            .map(|_| {
                let vals = (0..3)
                    .map(|l| {
                        let d = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
                        logs[l].push(d.clone());
                        SpdMatrix::new(&q * DMatrix::from_diagonal(&d.map(f64::exp)) * q.transpose()).unwrap()
                    })
                    .collect();
                SpdCurve::new(grid.clone(), vals).unwrap()
            })
            .collect();
        let mean = frechet_mean_curve(&curves, FrechetOptions::default()).unwrap();
        for l in 0..3 {
            let avg = logs[l].iter().fold(DVector::zeros(3), |a, b| a + b) / 5.0;
            let expected = &q * DMatrix::from_diagonal(&avg.map(f64::exp)) * q.transpose();
            assert!((mean.value(l).as_matrix() - expected).abs().max() < 1e-8);
        }
    }
}
