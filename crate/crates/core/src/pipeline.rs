//! End-to-end functional CCA between SPD-matrix curves and a covariate vector.
//!
//! `fit` runs RFPCA, whitens the scores by `diag(ω̂)`, solves the sparse CCA
//! regression against centered covariates and assembles the canonical
//! functions `ψ̂_k = Σ_j Ĥ_jk φ̂_j`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cca::{sparse_cca_with_cov, CcaModel};
use crate::field::{exp_curve, SpdCurve, TangentField, TimeGrid};
use crate::grouplasso::{
    cv_path, fold_assignment, lambda_grid, lambda_max, split_rows, CvPath, SolverOptions, DEFAULT_GRID_LEN,
    DEFAULT_GRID_RATIO,
};
use crate::linalg::{center_columns, column_means, column_sds, pearson};
use crate::rfpca::{frame_pairs, frame_size, mfpca, rfpca_fit, Mfpca, RfpcaBasis, ScoreMatrix};
use crate::spd::SymMatrix;
use crate::{Error, Result};

/// Relative CV-correlation gain below which a larger rank is not worth it.
pub const DEFAULT_RANK_GAIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub solver: SolverOptions,
    pub center_x: bool,
    pub scale_x: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            solver: SolverOptions::default(),
            center_x: true,
            scale_x: false,
        }
    }
}

/// Column centering and optional scaling applied to covariates before fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct XTransform {
    pub means: DVector<f64>,
    pub scales: Option<DVector<f64>>,
}

impl XTransform {
    pub fn fit(x: &DMatrix<f64>, center: bool, scale: bool) -> Result<Self> {
        let p = x.ncols();
        let means = if center { column_means(x) } else { DVector::zeros(p) };
        let scales = if scale {
            let sds = column_sds(x);
            if let Some(j) = sds.iter().position(|&s| !(s > 0.0)) {
                return Err(Error::ZeroVariance(format!("covariate column {} is constant", j + 1)));
            }
            Some(sds)
        } else {
            None
        };
        Ok(XTransform { means, scales })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch(format!(
                "covariates have {} columns, model expects {}",
                x.ncols(),
                self.means.len()
            )));
        }
        let mut out = center_columns(x, &self.means);
        if let Some(s) = &self.scales {
            for (j, sd) in s.iter().enumerate() {
                out.column_mut(j).scale_mut(1.0 / sd);
            }
        }
        Ok(out)
    }

    /// Maps weights on transformed covariates to weights on raw covariates.
    pub fn raw_weights(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = t.clone();
        if let Some(s) = &self.scales {
            for (j, sd) in s.iter().enumerate() {
                out.row_mut(j).scale_mut(1.0 / sd);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FunctionalCcaModel {
    pub basis: RfpcaBasis,
    pub cca: CcaModel,
    /// `ψ̂_k` along the estimated mean curve.
    pub canonical_functions: Vec<TangentField>,
    pub x_transform: XTransform,
}

impl FunctionalCcaModel {
    pub fn k(&self) -> usize {
        self.cca.k()
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn mean_curve(&self) -> &Arc<SpdCurve> {
        &self.basis.mean_curve
    }

    /// Canonical vectors `θ̂_k` acting on raw covariates.
    pub fn theta(&self) -> DMatrix<f64> {
        self.x_transform.raw_weights(&self.cca.t)
    }

    /// `⟨⟨Log_μ̂ y_i − z̄, ψ̂_k⟩⟩` for every curve and retained pair.
    pub fn functional_variates(&self, curves: &[SpdCurve]) -> Result<DMatrix<f64>> {
        Ok(self.basis.project(curves)? * &self.cca.h)
    }

    pub fn covariate_variates(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.x_transform.apply(x)? * &self.cca.t)
    }
}

fn check_sizes(n_curves: usize, x: &DMatrix<f64>, d: usize, grid_dim: usize) -> Result<()> {
    if n_curves != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{n_curves} curves but {} covariate rows",
            x.nrows()
        )));
    }
    let (n, p) = (x.nrows(), x.ncols());
    if d == 0 || n < 2 || d > p.min(n - 1).min(grid_dim) {
        return Err(Error::InvalidArgument(format!(
            "rank {d} must satisfy 1 ≤ d ≤ min(p={p}, N−1={}, L·M={grid_dim})",
            n.saturating_sub(1)
        )));
    }
    Ok(())
}

fn curve_grid_dim(curves: &[SpdCurve]) -> Result<usize> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves given".into()))?;
    Ok(first.len() * frame_size(first.dim()))
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

/// Sparse CCA on PC scores with `Σ̂_Y = diag(ω̂)`.
fn cca_on_scores(
    scores: &DMatrix<f64>,
    eigenvalues: &[f64],
    xt: &DMatrix<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<CcaModel> {
    let model = sparse_cca_with_cov(scores, xt, &diag(eigenvalues), lambda, opts)?;
    if model.k() == 0 {
        log::warn!("λ={lambda:.4e} is at or above λ_max; no canonical pairs retained");
    }
    Ok(model)
}

pub fn fit(curves: &[SpdCurve], x: &DMatrix<f64>, d: usize, lambda: f64) -> Result<FunctionalCcaModel> {
    fit_with_options(curves, x, d, lambda, &FitOptions::default())
}

pub fn fit_with_options(
    curves: &[SpdCurve],
    x: &DMatrix<f64>,
    d: usize,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FunctionalCcaModel> {
    check_sizes(curves.len(), x, d, curve_grid_dim(curves)?)?;
    let (basis, scores) = rfpca_fit(curves, d)?;
    fit_from_basis(basis, &scores, x, lambda, opts)
}

/// Remaining steps of [`fit`] given an RFPCA basis and its training scores.
pub fn fit_from_basis(
    basis: RfpcaBasis,
    scores: &ScoreMatrix,
    x: &DMatrix<f64>,
    lambda: f64,
    opts: &FitOptions,
) -> Result<FunctionalCcaModel> {
    let x_transform = XTransform::fit(x, opts.center_x, opts.scale_x)?;
    let xt = x_transform.apply(x)?;
    let cca = cca_on_scores(scores.values(), &basis.eigenvalues, &xt, lambda, &opts.solver)?;
    let canonical_functions = (0..cca.k())
        .map(|k| {
            let w: Vec<f64> = cca.h.column(k).iter().copied().collect();
            basis.combine(&w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FunctionalCcaModel {
        basis,
        cca,
        canonical_functions,
        x_transform,
    })
}

/// Keeps the leading `d` components of a basis.
pub fn truncate_basis(basis: &RfpcaBasis, d: usize) -> Result<RfpcaBasis> {
    if d == 0 || d > basis.rank() {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {d} of {} components",
            basis.rank()
        )));
    }
    Ok(RfpcaBasis {
        mean_curve: basis.mean_curve.clone(),
        components: basis.components[..d].to_vec(),
        eigenvalues: basis.eigenvalues[..d].to_vec(),
        coefficient_components: basis.coefficient_components[..d].to_vec(),
        coefficient_mean: basis.coefficient_mean.clone(),
    })
}

/// One cell of the cross-validation table.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub d: usize,
    pub lambda: f64,
    pub mean_error: f64,
    pub sd_error: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub chosen_d: usize,
    pub chosen_lambda: f64,
    pub table: Vec<CvRow>,
    /// Per rank in `d_grid` order: the λ chosen for it.
    pub lambda_by_d: Vec<f64>,
    /// Per rank: held-out first canonical correlation averaged over folds.
    pub cv_correlation: Vec<f64>,
    pub d_grid: Vec<usize>,
    pub model: FunctionalCcaModel,
}

/// Held-out first canonical correlation averaged over folds.
fn cv_first_correlation(
    scores: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    lambda: f64,
    labels: &[usize],
    folds: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let (y_tr, y_val) = split_rows(scores, labels, fold);
            let (x_tr, x_val) = split_rows(xt, labels, fold);
            let x_means = column_means(&x_tr);
            let x_tr = center_columns(&x_tr, &x_means);
            let x_val = center_columns(&x_val, &x_means);
            let omega: Vec<f64> = (0..y_tr.ncols())
                .map(|j| y_tr.column(j).norm_squared() / y_tr.nrows() as f64)
                .collect();
            let model = match sparse_cca_with_cov(&y_tr, &x_tr, &diag(&omega), lambda, opts) {
                Ok(m) => m,
                Err(e) if e.is_numeric() => {
                    log::warn!("fold {fold}: {e}");
                    return Ok(0.0);
                }
                Err(e) => return Err(e),
            };
            if model.k() == 0 {
                return Ok(0.0);
            }
            let u: Vec<f64> = (&x_val * model.t.column(0)).iter().copied().collect();
            let v: Vec<f64> = (&y_val * model.h.column(0)).iter().copied().collect();
            Ok(pearson(&u, &v).unwrap_or(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_fold.iter().sum::<f64>() / folds as f64)
}

/// Smallest rank whose relative gain in CV correlation over the previous
/// rank is below `threshold`; the largest rank when every step gains.
pub fn choose_rank(d_grid: &[usize], cv_correlation: &[f64], threshold: f64) -> usize {
    for i in 1..d_grid.len() {
        let prev = cv_correlation[i - 1];
        let gain = (cv_correlation[i] - prev) / prev.abs().max(f64::MIN_POSITIVE);
        if gain < threshold {
            return d_grid[i];
        }
    }
    *d_grid.last().expect("nonempty grid")
}

/// Selects `(d, λ)` by K-fold cross-validation and refits on all data.
///
/// RFPCA runs once at the largest rank; smaller ranks use leading components.
/// For each rank, λ minimizes the held-out regression error. With `lambdas`
/// unset, each rank uses the default log-spaced grid below its own `λ_max`.
pub fn fit_cv(
    curves: &[SpdCurve],
    x: &DMatrix<f64>,
    d_grid: &[usize],
    lambdas: Option<&[f64]>,
    folds: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<CvOutcome> {
    if d_grid.is_empty() {
        return Err(Error::InvalidArgument("empty rank grid".into()));
    }
    if lambdas.is_some_and(|l| l.is_empty()) {
        return Err(Error::InvalidArgument("empty λ grid".into()));
    }
    let mut d_sorted = d_grid.to_vec();
    d_sorted.sort_unstable();
    d_sorted.dedup();
    let d_max = *d_sorted.last().expect("nonempty");
    check_sizes(curves.len(), x, d_max, curve_grid_dim(curves)?)?;
    let (basis, scores) = rfpca_fit(curves, d_max)?;
    let x_transform = XTransform::fit(x, opts.center_x, opts.scale_x)?;
    let xt = x_transform.apply(x)?;
    let labels = fold_assignment(x.nrows(), folds, seed)?;

    let mut table = Vec::new();
    let mut lambda_by_d = Vec::new();
    let mut cv_correlation = Vec::new();
    for &d in &d_sorted {
        let y_d = scores.values().columns(0, d).into_owned();
        let mut m = y_d.clone();
        for j in 0..d {
            m.column_mut(j).scale_mut(1.0 / basis.eigenvalues[j].sqrt());
        }
        let grid: Vec<f64> = match lambdas {
            Some(l) => {
                let mut g = l.to_vec();
                g.sort_by(|a, b| b.total_cmp(a));
                g
            }
            None => lambda_grid(lambda_max(&xt, &m)?, DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO),
        };
        let path: CvPath = cv_path(&xt, &m, &grid, folds, seed, &opts.solver)?;
        for j in 0..grid.len() {
            table.push(CvRow {
                d,
                lambda: grid[j],
                mean_error: path.mean_error[j],
                sd_error: path.sd_error[j],
            });
        }
        let lambda = path.best_lambda();
        lambda_by_d.push(lambda);
        cv_correlation.push(cv_first_correlation(&y_d, &xt, lambda, &labels, folds, &opts.solver)?);
    }
    let chosen_d = choose_rank(&d_sorted, &cv_correlation, DEFAULT_RANK_GAIN);
    let idx = d_sorted.iter().position(|&d| d == chosen_d).expect("chosen from grid");
    let chosen_lambda = lambda_by_d[idx];
    let sub = truncate_basis(&basis, chosen_d)?;
    let sub_scores = ScoreMatrix(scores.values().columns(0, chosen_d).into_owned());
    let model = fit_from_basis(sub, &sub_scores, x, chosen_lambda, opts)?;
    Ok(CvOutcome {
        chosen_d,
        chosen_lambda,
        table,
        lambda_by_d,
        cv_correlation,
        d_grid: d_sorted,
        model,
    })
}

/// `(Exp_μ̂(c ψ̂_k), Exp_μ̂(−c ψ̂_k))`, with `k` counted from 1.
pub fn mode_extremes(model: &FunctionalCcaModel, k: usize, c: f64) -> Result<(SpdCurve, SpdCurve)> {
    if k == 0 || k > model.k() {
        return Err(Error::InvalidArgument(format!(
            "mode {k} requested but the model has {} canonical pairs",
            model.k()
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument(format!("mode scale must be positive, got {c}")));
    }
    let psi = &model.canonical_functions[k - 1];
    Ok((exp_curve(&psi.scale(c))?, exp_curve(&psi.scale(-c))?))
}

/// Functional CCA that treats matrices as vectors in the ambient space.
#[derive(Debug, Clone)]
pub struct EuclideanCcaModel {
    pub grid: TimeGrid,
    /// Arithmetic mean curve.
    pub mean: Vec<DMatrix<f64>>,
    /// Principal components as symmetric-matrix curves.
    pub components: Vec<Vec<DMatrix<f64>>>,
    pub eigenvalues: Vec<f64>,
    pub cca: CcaModel,
    pub canonical_functions: Vec<Vec<DMatrix<f64>>>,
    pub x_transform: XTransform,
    /// Mean and components in identity-frame coordinates (`L × M`).
    pub coefficient_mean: DMatrix<f64>,
    pub coefficient_components: Vec<DMatrix<f64>>,
}

/// Identity-frame coordinates: diagonal entries, then `√2·a_ij` for `i < j`.
fn identity_coordinates(a: &DMatrix<f64>, out: &mut [f64]) {
    for (k, (i, j)) in frame_pairs(a.nrows()).into_iter().enumerate() {
        out[k] = if i == j { a[(i, i)] } else { std::f64::consts::SQRT_2 * a[(i, j)] };
    }
}

fn euclidean_coefficients(curves: &[SpdCurve]) -> Vec<DMatrix<f64>> {
    curves
        .par_iter()
        .map(|c| {
            let mm = frame_size(c.dim());
            let mut z = DMatrix::zeros(c.len(), mm);
            let mut row = vec![0.0; mm];
            for (l, v) in c.values().enumerate() {
                identity_coordinates(v.as_matrix(), &mut row);
                for k in 0..mm {
                    z[(l, k)] = row[k];
                }
            }
            z
        })
        .collect()
}

fn coefficient_curve_to_matrices(z: &DMatrix<f64>, m: usize) -> Vec<DMatrix<f64>> {
    (0..z.nrows())
        .map(|l| {
            let row: Vec<f64> = z.row(l).iter().copied().collect();
            crate::rfpca::from_whitened_coordinates(&row, m)
        })
        .collect()
}

pub fn fit_euclidean(curves: &[SpdCurve], x: &DMatrix<f64>, d: usize, lambda: f64) -> Result<EuclideanCcaModel> {
    fit_euclidean_with_options(curves, x, d, lambda, &FitOptions::default())
}

/// Euclidean PCA of the coefficient curves, returned with its scores.
pub fn euclidean_pca(curves: &[SpdCurve], d: usize) -> Result<(TimeGrid, usize, Mfpca)> {
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
    let z = euclidean_coefficients(curves);
    let fit = mfpca(&z, d, first.grid())?;
    Ok((first.grid().clone(), first.dim(), fit))
}

pub fn fit_euclidean_with_options(
    curves: &[SpdCurve],
    x: &DMatrix<f64>,
    d: usize,
    lambda: f64,
    opts: &FitOptions,
) -> Result<EuclideanCcaModel> {
    check_sizes(curves.len(), x, d, curve_grid_dim(curves)?)?;
    let (grid, m, pca) = euclidean_pca(curves, d)?;
    euclidean_from_pca(grid, m, pca, x, lambda, opts)
}

pub fn euclidean_from_pca(
    grid: TimeGrid,
    m: usize,
    pca: Mfpca,
    x: &DMatrix<f64>,
    lambda: f64,
    opts: &FitOptions,
) -> Result<EuclideanCcaModel> {
    let x_transform = XTransform::fit(x, opts.center_x, opts.scale_x)?;
    let xt = x_transform.apply(x)?;
    let cca = cca_on_scores(&pca.scores, &pca.eigenvalues, &xt, lambda, &opts.solver)?;
    Ok(euclidean_with_cca(grid, m, pca, cca, x_transform))
}

/// Assembles the Euclidean model from its PCA and CCA parts.
pub fn euclidean_with_cca(grid: TimeGrid, m: usize, pca: Mfpca, cca: CcaModel, x_transform: XTransform) -> EuclideanCcaModel {
    let components: Vec<Vec<DMatrix<f64>>> = pca
        .components
        .iter()
        .map(|pi| coefficient_curve_to_matrices(pi, m))
        .collect();
    let canonical_functions = (0..cca.k())
        .map(|k| {
            let mut z = DMatrix::zeros(grid.len(), frame_size(m));
            for (j, pi) in pca.components.iter().enumerate() {
                z += pi * cca.h[(j, k)];
            }
            coefficient_curve_to_matrices(&z, m)
        })
        .collect();
    EuclideanCcaModel {
        mean: coefficient_curve_to_matrices(&pca.mean, m),
        grid,
        components,
        eigenvalues: pca.eigenvalues,
        cca,
        canonical_functions,
        x_transform,
        coefficient_mean: pca.mean,
        coefficient_components: pca.components,
    }
}

impl EuclideanCcaModel {
    pub fn k(&self) -> usize {
        self.cca.k()
    }

    pub fn theta(&self) -> DMatrix<f64> {
        self.x_transform.raw_weights(&self.cca.t)
    }

    /// Centered PC scores of new curves.
    pub fn project(&self, curves: &[SpdCurve]) -> Result<DMatrix<f64>> {
        let z = euclidean_coefficients(curves);
        let w = self.grid.weights();
        let mut out = DMatrix::zeros(curves.len(), self.coefficient_components.len());
        for (i, zi) in z.iter().enumerate() {
            if zi.shape() != self.coefficient_mean.shape() {
                return Err(Error::DimensionMismatch(format!("curve {i} does not match the model grid")));
            }
            let c = zi - &self.coefficient_mean;
            for (j, pi) in self.coefficient_components.iter().enumerate() {
                out[(i, j)] = (0..w.len()).map(|l| w[l] * c.row(l).dot(&pi.row(l))).sum();
            }
        }
        Ok(out)
    }

    /// Canonical functions as symmetric-matrix curves.
    pub fn canonical_function_values(&self, k: usize) -> Result<Vec<SymMatrix>> {
        let f = self
            .canonical_functions
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("no canonical pair {}", k + 1)))?;
        Ok(f.iter().map(|a| SymMatrix::from_trusted(a.clone())).collect())
    }
}
