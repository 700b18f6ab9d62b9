//! Row-wise group-lasso regression
//!
//! ```text
//! minimize over B (p × d):  (2/N) ‖M − X B‖_F² + λ Σ_i ‖b_i‖₂
//! ```
//!
//! solved by FISTA with gradient-based adaptive restart. The smooth part is
//! handled through `G = XᵀX/N` and `C = XᵀM/N`, so each iteration costs
//! `O(p² d)` regardless of `N`. No intercept and no standardization.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::linalg::{gram, spectral_norm_sym, symmetrize};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative objective change below which optimality is checked.
    pub tol: f64,
    /// KKT residual bound, relative to `max(1, λ_max)`.
    pub kkt_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            kkt_tol: 1e-9,
            max_iter: 50_000,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.kkt_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "solver options need tol > 0, kkt_tol > 0 and max_iter ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub restarts: usize,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Objective after every iteration.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub coef: DMatrix<f64>,
    pub report: SolveReport,
}

/// How `G·B` is formed: from the stored `p × p` Gram matrix, or as
/// `Xᵀ(XB)/N` when `N < p` makes that cheaper.
#[derive(Debug, Clone)]
enum Design {
    Gram(DMatrix<f64>),
    Data(DMatrix<f64>),
}

/// Sufficient statistics of one regression problem.
#[derive(Debug, Clone)]
pub struct GroupLasso {
    n: usize,
    p: usize,
    design: Design,
    c: DMatrix<f64>,
    m_sq: f64,
    lipschitz: f64,
}

fn check_inputs(x: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != m.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows, M has {}",
            x.nrows(),
            m.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument("regression needs N ≥ 2".into()));
    }
    if x.iter().chain(m.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite entry in X or M".into()));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("λ must be finite and ≥ 0, got {lambda}")));
    }
    Ok(())
}

fn row_norm(b: &DMatrix<f64>, i: usize) -> f64 {
    b.row(i).norm()
}

fn penalty(b: &DMatrix<f64>) -> f64 {
    (0..b.nrows()).map(|i| row_norm(b, i)).sum()
}

/// Scales each row by `(1 − τ/‖v_i‖)₊`.
fn row_prox(v: &mut DMatrix<f64>, tau: f64) {
    for i in 0..v.nrows() {
        let norm = row_norm(v, i);
        let shrink = if norm > tau { 1.0 - tau / norm } else { 0.0 };
        if shrink == 0.0 {
            v.row_mut(i).fill(0.0);
        } else {
            v.row_mut(i).scale_mut(shrink);
        }
    }
}

impl GroupLasso {
    pub fn new(x: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<Self> {
        check_inputs(x, m)?;
        let (n, p) = x.shape();
        let c = x.tr_mul(m) / n as f64;
        let (design, lipschitz) = if n < p {
            // XXᵀ/N shares the nonzero spectrum of XᵀX/N
            let small = symmetrize(&(x * x.transpose() / n as f64));
            (Design::Data(x.clone()), 4.0 * spectral_norm_sym(&small)?)
        } else {
            let g = gram(x);
            let l = 4.0 * spectral_norm_sym(&g)?;
            (Design::Gram(g), l)
        };
        Ok(GroupLasso {
            n,
            p,
            design,
            c,
            m_sq: m.norm_squared() / n as f64,
            lipschitz,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.p
    }

    /// `G·B` with `G = XᵀX/N`.
    fn gram_times(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.design {
            Design::Gram(g) => g * b,
            Design::Data(x) => x.tr_mul(&(x * b)) / self.n as f64,
        }
    }

    /// Smooth loss from a precomputed `G·B`.
    fn smooth_with(&self, b: &DMatrix<f64>, gb: &DMatrix<f64>) -> f64 {
        (2.0 * (self.m_sq - 2.0 * b.dot(&self.c) + b.dot(gb))).max(0.0)
    }

    pub fn n_responses(&self) -> usize {
        self.c.ncols()
    }

    /// `(4/N) max_i ‖(XᵀM)_i‖₂`.
    pub fn lambda_max(&self) -> f64 {
        4.0 * (0..self.c.nrows()).map(|i| row_norm(&self.c, i)).fold(0.0, f64::max)
    }

    fn check_coef(&self, b: &DMatrix<f64>) -> Result<()> {
        if b.shape() != self.c.shape() {
            return Err(Error::DimensionMismatch(format!(
                "coefficients are {}x{}, expected {}x{}",
                b.nrows(),
                b.ncols(),
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        Ok(())
    }

    fn smooth(&self, b: &DMatrix<f64>) -> f64 {
        self.smooth_with(b, &self.gram_times(b))
    }

    pub fn objective(&self, b: &DMatrix<f64>, lambda: f64) -> Result<f64> {
        self.check_coef(b)?;
        Ok(self.smooth(b) + lambda * penalty(b))
    }

    /// Gradient of the smooth part, `−(4/N)Xᵀ(M − XB) = 4(GB − C)`.
    pub fn gradient(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        (self.gram_times(b) - &self.c) * 4.0
    }

    pub fn kkt_residual(&self, b: &DMatrix<f64>, lambda: f64) -> Result<f64> {
        self.check_coef(b)?;
        let grad = self.gradient(b);
        let mut worst = 0.0_f64;
        for i in 0..b.nrows() {
            let norm = row_norm(b, i);
            let r = if norm > 0.0 {
                (grad.row(i) + b.row(i) * (lambda / norm)).norm()
            } else {
                (row_norm(&grad, i) - lambda).max(0.0)
            };
            worst = worst.max(r);
        }
        Ok(worst)
    }

    /// Solves at `lambda`, optionally warm-started. Returns the last iterate
    /// even when the iteration limit is hit; see `report.converged`.
    pub fn solve_from(
        &self,
        lambda: f64,
        opts: &SolverOptions,
        warm: Option<&DMatrix<f64>>,
    ) -> Result<Solution> {
        check_lambda(lambda)?;
        opts.validate()?;
        let (p, d) = self.c.shape();
        let lmax = self.lambda_max();
        let kkt_bound = opts.kkt_tol * lmax.max(1.0);
        if lambda >= lmax {
            let coef = DMatrix::zeros(p, d);
            let objective = self.smooth(&coef);
            return Ok(Solution {
                coef,
                report: SolveReport {
                    iterations: 0,
                    restarts: 0,
                    objective,
                    kkt_residual: 0.0,
                    converged: true,
                    history: vec![objective],
                },
            });
        }
        if lambda == 0.0 {
            if let Some(sol) = self.least_squares()? {
                return Ok(sol);
            }
        }
        let mut x = match warm {
            Some(w) => {
                self.check_coef(w)?;
                w.clone()
            }
            None => DMatrix::zeros(p, d),
        };
        let step = 1.0 / self.lipschitz;
        // G·x and G·y are carried along; G is linear in the iterate, so one
        // product per iteration suffices
        let mut gx = self.gram_times(&x);
        let mut y = x.clone();
        let mut gy = gx.clone();
        let mut t = 1.0_f64;
        let mut obj = self.smooth_with(&x, &gx) + lambda * penalty(&x);
        let mut history = Vec::new();
        let mut restarts = 0;
        let mut kkt = f64::INFINITY;
        for iter in 1..=opts.max_iter {
            let mut next = &y - (&gy - &self.c) * (4.0 * step);
            row_prox(&mut next, lambda * step);
            let g_next = self.gram_times(&next);
            let next_obj = self.smooth_with(&next, &g_next) + lambda * penalty(&next);
            history.push(next_obj);

            let momentum_ok = (&y - &next).dot(&(&next - &x)) <= 0.0;
            let t_next = if momentum_ok {
                0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
            } else {
                restarts += 1;
                1.0
            };
            if momentum_ok {
                let beta = (t - 1.0) / t_next;
                y = &next + (&next - &x) * beta;
                gy = &g_next + (&g_next - &gx) * beta;
            } else {
                y = next.clone();
                gy = g_next.clone();
            }
            t = t_next;
            let change = (obj - next_obj).abs();
            x = next;
            gx = g_next;
            obj = next_obj;
            if change <= opts.tol * obj.abs().max(f64::MIN_POSITIVE) {
                kkt = self.kkt_residual(&x, lambda)?;
                if kkt <= kkt_bound {
                    return Ok(Solution {
                        coef: x,
                        report: SolveReport {
                            iterations: iter,
                            restarts,
                            objective: obj,
                            kkt_residual: kkt,
                            converged: true,
                            history,
                        },
                    });
                }
            }
        }
        if !kkt.is_finite() {
            kkt = self.kkt_residual(&x, lambda)?;
        }
        Ok(Solution {
            coef: x,
            report: SolveReport {
                iterations: opts.max_iter,
                restarts,
                objective: obj,
                kkt_residual: kkt,
                converged: false,
                history,
            },
        })
    }

    /// Unpenalized minimizer `G⁻¹C` when `G` is positive definite; `None` otherwise so the
    /// caller falls back to the iterative solver. Ill-conditioned `G` makes FISTA crawl, while
    /// the normal equations are exact up to rounding.
    fn least_squares(&self) -> Result<Option<Solution>> {
        let Design::Gram(g) = &self.design else {
            return Ok(None);
        };
        let Some(chol) = g.clone().cholesky() else {
            return Ok(None);
        };
        let coef = chol.solve(&self.c);
        let objective = self.smooth(&coef);
        let kkt_residual = self.kkt_residual(&coef, 0.0)?;
        Ok(Some(Solution {
            coef,
            report: SolveReport {
                iterations: 0,
                restarts: 0,
                objective,
                kkt_residual,
                converged: true,
                history: vec![objective],
            },
        }))
    }

    /// Like [`GroupLasso::solve_from`] but fails when the solver does not converge.
    pub fn solve(&self, lambda: f64, opts: &SolverOptions, warm: Option<&DMatrix<f64>>) -> Result<Solution> {
        let sol = self.solve_from(lambda, opts, warm)?;
        if !sol.report.converged {
            return Err(Error::NoConvergence {
                what: "group lasso",
                iterations: sol.report.iterations,
                residual: sol.report.kkt_residual,
                last_iterate: Box::new(sol.coef),
            });
        }
        Ok(sol)
    }
}

pub fn objective(x: &DMatrix<f64>, m: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    check_inputs(x, m)?;
    if b.nrows() != x.ncols() || b.ncols() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients are {}x{}, expected {}x{}",
            b.nrows(),
            b.ncols(),
            x.ncols(),
            m.ncols()
        )));
    }
    let resid = m - x * b;
    Ok(2.0 / x.nrows() as f64 * resid.norm_squared() + lambda * penalty(b))
}

pub fn lambda_max(x: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    check_inputs(x, m)?;
    let xtm = x.tr_mul(m);
    let best = (0..xtm.nrows()).map(|i| row_norm(&xtm, i)).fold(0.0, f64::max);
    Ok(4.0 / x.nrows() as f64 * best)
}

pub fn solve(x: &DMatrix<f64>, m: &DMatrix<f64>, lambda: f64, opts: &SolverOptions) -> Result<DMatrix<f64>> {
    Ok(GroupLasso::new(x, m)?.solve(lambda, opts, None)?.coef)
}

pub fn kkt_residual(x: &DMatrix<f64>, m: &DMatrix<f64>, lambda: f64, b: &DMatrix<f64>) -> Result<f64> {
    GroupLasso::new(x, m)?.kkt_residual(b, lambda)
}

/// `len` log-spaced values from `lmax` down to `ratio · lmax`.
pub fn lambda_grid(lmax: f64, len: usize, ratio: f64) -> Vec<f64> {
    match len {
        0 => vec![],
        1 => vec![lmax],
        _ => (0..len)
            .map(|i| lmax * ratio.powf(i as f64 / (len - 1) as f64))
            .collect(),
    }
}

pub const DEFAULT_GRID_LEN: usize = 100;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;

/// Fold label of every observation: a seeded permutation cut into `k`
/// contiguous blocks whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} observations into {k} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut labels = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[pos..pos + size] {
            labels[i] = fold;
        }
        pos += size;
    }
    Ok(labels)
}

pub(crate) fn split_rows(a: &DMatrix<f64>, labels: &[usize], fold: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let train: Vec<usize> = (0..a.nrows()).filter(|&i| labels[i] != fold).collect();
    let test: Vec<usize> = (0..a.nrows()).filter(|&i| labels[i] == fold).collect();
    (a.select_rows(train.iter()), a.select_rows(test.iter()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPath {
    pub lambdas: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub sd_error: Vec<f64>,
    /// `fold_errors[fold][λ index]`.
    pub fold_errors: Vec<Vec<f64>>,
    pub best_index: usize,
    /// Largest λ whose mean error is within one sd of the minimum.
    pub one_sd_index: usize,
}

impl CvPath {
    pub fn best_lambda(&self) -> f64 {
        self.lambdas[self.best_index]
    }

    pub fn one_sd_lambda(&self) -> f64 {
        self.lambdas[self.one_sd_index]
    }
}

/// Held-out error `(2/N_val)‖M_val − X_val B‖_F²` along a descending λ path.
///
/// Each fold walks the path with warm starts. Folds run in parallel; the
/// result does not depend on scheduling.
pub fn cv_path(
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    lambdas: &[f64],
    folds: usize,
    seed: u64,
    opts: &SolverOptions,
) -> Result<CvPath> {
    check_inputs(x, m)?;
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty λ grid".into()));
    }
    for &l in lambdas {
        check_lambda(l)?;
    }
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidArgument("λ grid must be descending".into()));
    }
    let labels = fold_assignment(x.nrows(), folds, seed)?;
    let fold_errors = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let (x_tr, x_val) = split_rows(x, &labels, fold);
            let (m_tr, m_val) = split_rows(m, &labels, fold);
            let problem = GroupLasso::new(&x_tr, &m_tr)?;
            let mut warm: Option<DMatrix<f64>> = None;
            let mut errs = Vec::with_capacity(lambdas.len());
            for &lambda in lambdas {
                let sol = problem.solve_from(lambda, opts, warm.as_ref())?;
                if !sol.report.converged {
                    log::warn!(
                        "fold {fold}: group lasso at λ={lambda:.3e} stopped after {} iterations (KKT {:.2e})",
                        sol.report.iterations,
                        sol.report.kkt_residual
                    );
                }
                let resid = &m_val - &x_val * &sol.coef;
                errs.push(2.0 / x_val.nrows() as f64 * resid.norm_squared());
                warm = Some(sol.coef);
            }
            Ok(errs)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(summarize_cv(lambdas.to_vec(), fold_errors))
}

fn summarize_cv(lambdas: Vec<f64>, fold_errors: Vec<Vec<f64>>) -> CvPath {
    let k = fold_errors.len() as f64;
    let len = lambdas.len();
    let mut mean_error = vec![0.0; len];
    let mut sd_error = vec![0.0; len];
    for j in 0..len {
        let mean = fold_errors.iter().map(|f| f[j]).sum::<f64>() / k;
        let var = fold_errors.iter().map(|f| (f[j] - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        mean_error[j] = mean;
        sd_error[j] = var.sqrt();
    }
    let best_index = (0..len)
        .min_by(|&a, &b| mean_error[a].total_cmp(&mean_error[b]))
        .unwrap_or(0);
    let bound = mean_error[best_index] + sd_error[best_index];
    // grid is descending, so the first qualifying index is the largest λ
    let one_sd_index = (0..len).find(|&j| mean_error[j] <= bound).unwrap_or(best_index);
    CvPath {
        lambdas,
        mean_error,
        sd_error,
        fold_errors,
        best_index,
        one_sd_index,
    }
}
