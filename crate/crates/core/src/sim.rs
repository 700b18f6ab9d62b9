//! Synthetic data with planted canonical pairs, and accuracy metrics.
//!
//! `(Y, X)` is jointly Gaussian with
//! `Σ_YX = Σ_Y (Σ_k γ_k η_k θ_kᵀ) Σ_X`, so `(η_k, θ_k, γ_k)` are its
//! population canonical pairs. Curves are `y = Exp_μ(Σ_j Y_j φ_j + W φ_{d+1})`
//! for orthonormal fields `φ_j` and an independent contamination `W`.

use std::f64::consts::FRAC_PI_4;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{exp_curve, field_inner, field_norm, log_curve, transport_field, SpdCurve, TangentField, TimeGrid};
use crate::grouplasso::{cv_path, lambda_grid, lambda_max, SolverOptions};
use crate::linalg::{center_columns, column_means, pearson};
use crate::pipeline::{euclidean_from_pca, euclidean_pca, fit_from_basis, FitOptions};
use crate::rfpca::{frame_at_base, frame_size, rfpca_fit};
use crate::spd::{SpdMatrix, SymMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Covariate dimension.
    pub p: usize,
    /// Number of functional principal components carrying signal.
    pub d: usize,
    /// Matrix size.
    pub m: usize,
    /// Grid length on `[t_start, t_end]`.
    pub grid_len: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Number of planted canonical pairs.
    pub k: usize,
    /// Shared support size of the `θ_k`.
    pub k1: usize,
    pub gamma: Vec<f64>,
    /// Diagonal of `Σ_Y`.
    pub sigma_y: Vec<f64>,
    /// `Var(W)` of the contaminating mode; 0 disables it.
    pub contamination_var: f64,
    /// Highest polynomial degree available for building `φ_j`.
    pub max_degree: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            p: 200,
            d: 3,
            m: 3,
            grid_len: 50,
            t_start: -1.0,
            t_end: 1.0,
            k: 2,
            k1: 20,
            gamma: vec![0.95, 0.60],
            sigma_y: vec![3.0, 2.0, 1.0],
            contamination_var: 0.5,
            max_degree: 3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k == 0 || self.k > self.d || self.d > self.p {
            return bad(format!("need 1 ≤ K ≤ d ≤ p, got K={}, d={}, p={}", self.k, self.d, self.p));
        }
        if self.k1 < self.k || self.k1 > self.p {
            return bad(format!("need K ≤ k1 ≤ p, got k1={}", self.k1));
        }
        if self.gamma.len() != self.k || self.gamma.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return bad("gamma needs K values in (0, 1)".into());
        }
        if self.sigma_y.len() != self.d || self.sigma_y.iter().any(|s| !(*s > 0.0)) {
            return bad("sigma_y needs d positive values".into());
        }
        if self.m == 0 || self.grid_len < 2 || !(self.t_end > self.t_start) {
            return bad("need m ≥ 1, grid_len ≥ 2 and t_end > t_start".into());
        }
        if !(self.contamination_var >= 0.0) {
            return bad("contamination variance must be ≥ 0".into());
        }
        if self.max_degree + 1 > self.grid_len {
            return bad("polynomial degree exceeds what the grid resolves".into());
        }
        if self.d + 1 > frame_size(self.m) * (self.max_degree + 1) {
            return bad("not enough (frame, degree) pairs for d + 1 orthonormal fields".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t_start, self.t_end, self.grid_len)
    }

    /// Diagonal of `Σ_X`: 2 on the first half of the support, 1 elsewhere.
    pub fn sigma_x_diag(&self) -> DVector<f64> {
        DVector::from_fn(self.p, |i, _| if i < self.k1 / 2 { 2.0 } else { 1.0 })
    }
}

/// Independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Truth = 1,
    Multivariate = 2,
    Contamination = 3,
    TestMultivariate = 4,
    TestContamination = 5,
    Folds = 6,
}

pub fn stream_rng(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((purpose as u64) << 48) ^ index);
    r
}

fn trial_index(n: usize, trial: usize) -> u64 {
    ((n as u64) << 20) ^ trial as u64
}

#[derive(Debug, Clone)]
pub struct SimTruth {
    pub config: SimConfig,
    pub mu: Arc<SpdCurve>,
    /// `φ_1, …, φ_d`, then the contaminating `φ_{d+1}`.
    pub phis: Vec<TangentField>,
    /// `(frame index, polynomial degree)` used for each `φ_j`.
    pub phi_pairs: Vec<(usize, usize)>,
    /// `d × K`.
    pub etas: DMatrix<f64>,
    /// `p × K`.
    pub thetas: DMatrix<f64>,
    pub sigma_x_diag: DVector<f64>,
    pub sigma_y_diag: DVector<f64>,
    pub support: Vec<usize>,
    /// `ψ_k = Σ_j η_jk φ_j`.
    pub psis: Vec<TangentField>,
}

/// Legendre polynomials `P_0..=P_max` on the grid, orthonormalized in the
/// grid's quadrature inner product after mapping the grid to `[−1, 1]`.
pub fn discrete_legendre(grid: &TimeGrid, max_degree: usize) -> Vec<Vec<f64>> {
    let (a, b) = (grid.points()[0], grid.points()[grid.len() - 1]);
    let w = grid.weights();
    let inner = |f: &[f64], g: &[f64]| -> f64 { f.iter().zip(g).zip(w).map(|((x, y), w)| w * x * y).sum() };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_degree + 1);
    for n in 0..=max_degree {
        let mut v: Vec<f64> = grid
            .points()
            .iter()
            .map(|t| legendre(n, (2.0 * t - a - b) / (b - a)))
            .collect();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let c = inner(&v, q);
                v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = inner(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
}

fn legendre(n: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    match n {
        0 => p0,
        _ => {
            for k in 1..n {
                let k = k as f64;
                let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Gram-Schmidt in the inner product `⟨a, b⟩ = Σ_i a_i s_i b_i`, then normalized.
fn sigma_orthonormalize(mut vs: DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let inner = |a: &DVector<f64>, b: &DVector<f64>| a.component_mul(s).dot(b);
    for k in 0..vs.ncols() {
        let mut v = vs.column(k).into_owned();
        for _ in 0..2 {
            for j in 0..k {
                let q = vs.column(j).into_owned();
                v -= &q * inner(&v, &q);
            }
        }
        let norm = inner(&v, &v).sqrt();
        vs.set_column(k, &(v / norm));
    }
    vs
}

fn haar_orthogonal(r: &mut impl Rng, m: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| r.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, rr) = (qr.q(), qr.r());
    for j in 0..m {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Rotation by `(π/4)·t` in the plane of the first two coordinates.
fn rotation(m: usize, t: f64) -> DMatrix<f64> {
    let mut r = DMatrix::identity(m, m);
    if m >= 2 {
        let (s, c) = (FRAC_PI_4 * t).sin_cos();
        r[(0, 0)] = c;
        r[(0, 1)] = -s;
        r[(1, 0)] = s;
        r[(1, 1)] = c;
    }
    r
}

pub fn make_truth(cfg: &SimConfig) -> Result<SimTruth> {
    cfg.validate()?;
    let mut r = stream_rng(cfg.seed, Purpose::Truth, 0);
    let grid = cfg.grid()?;
    let m = cfg.m;

    let q = haar_orthogonal(&mut r, m);
    let lambda = DVector::from_fn(m, |i, _| (i + 1) as f64);
    let mu0 = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
    let mu_values = grid
        .points()
        .iter()
        .map(|&t| {
            let rt = rotation(m, t);
            SpdMatrix::new(crate::linalg::symmetrize(&(&rt * &mu0 * rt.transpose())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mu = Arc::new(SpdCurve::new(grid.clone(), mu_values)?);

    let polys = discrete_legendre(&grid, cfg.max_degree);
    let mut pairs: Vec<(usize, usize)> = (0..frame_size(m))
        .flat_map(|k| (0..=cfg.max_degree).map(move |n| (k, n)))
        .collect();
    pairs.shuffle(&mut r);
    pairs.truncate(cfg.d + 1);
    let frames: Vec<Vec<SymMatrix>> = mu.base_points().iter().map(frame_at_base).collect();
    let phis = pairs
        .iter()
        .map(|&(k, n)| {
            let values = (0..grid.len()).map(|l| frames[l][k].scale(polys[n][l])).collect();
            TangentField::new(mu.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;

    let sigma_y_diag = DVector::from_column_slice(&cfg.sigma_y);
    let sigma_x_diag = cfg.sigma_x_diag();
    let etas = sigma_orthonormalize(
        DMatrix::from_fn(cfg.d, cfg.k, |_, _| r.sample::<f64, _>(StandardNormal)),
        &sigma_y_diag,
    );
    let raw_theta = DMatrix::from_fn(cfg.p, cfg.k, |i, _| {
        let z: f64 = r.sample(StandardNormal);
        if i < cfg.k1 {
            z
        } else {
            0.0
        }
    });
    let thetas = sigma_orthonormalize(raw_theta, &sigma_x_diag);
    let psis = (0..cfg.k)
        .map(|k| {
            let mut psi = TangentField::zeros(mu.clone());
            for j in 0..cfg.d {
                psi.axpy(etas[(j, k)], &phis[j])?;
            }
            Ok(psi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimTruth {
        config: cfg.clone(),
        mu,
        phis,
        phi_pairs: pairs,
        etas,
        thetas,
        sigma_x_diag,
        sigma_y_diag,
        support: (0..cfg.k1).collect(),
        psis,
    })
}

impl SimTruth {
    /// `Σ_YX = Σ_Y (Σ_k γ_k η_k θ_kᵀ) Σ_X`.
    pub fn sigma_yx(&self) -> DMatrix<f64> {
        let mut core = DMatrix::zeros(self.etas.nrows(), self.thetas.nrows());
        for (k, g) in self.config.gamma.iter().enumerate() {
            core += self.etas.column(k) * self.thetas.column(k).transpose() * *g;
        }
        DMatrix::from_diagonal(&self.sigma_y_diag) * core * DMatrix::from_diagonal(&self.sigma_x_diag)
    }

    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let (d, p) = (self.etas.nrows(), self.thetas.nrows());
        let mut c = DMatrix::zeros(d + p, d + p);
        let syx = self.sigma_yx();
        c.view_mut((0, 0), (d, d)).copy_from(&DMatrix::from_diagonal(&self.sigma_y_diag));
        c.view_mut((d, d), (p, p)).copy_from(&DMatrix::from_diagonal(&self.sigma_x_diag));
        c.view_mut((0, d), (d, p)).copy_from(&syx);
        c.view_mut((d, 0), (p, d)).copy_from(&syx.transpose());
        c
    }
}

/// `N` i.i.d. draws of `(Y, X)` from the planted joint Gaussian.
pub fn sample_multivariate(truth: &SimTruth, n: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    sample_multivariate_with(truth, n, &mut stream_rng(seed, Purpose::Multivariate, 0))
}

pub fn sample_multivariate_with(
    truth: &SimTruth,
    n: usize,
    r: &mut impl Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let cov = truth.joint_covariance();
    let chol = cov.clone().cholesky().ok_or_else(|| {
        let min = crate::linalg::sym_eigen(&cov)
            .map(|(v, _)| v.last().copied().unwrap_or(f64::NAN))
            .unwrap_or(f64::NAN);
        Error::NotPositiveDefinite {
            min_eigenvalue: min,
            max_eigenvalue: f64::NAN,
        }
    })?;
    let dim = cov.nrows();
    let mut z = DMatrix::<f64>::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            z[(i, j)] = r.sample(StandardNormal);
        }
    }
    let data = z * chol.l().transpose();
    let d = truth.etas.nrows();
    Ok((data.columns(0, d).into_owned(), data.columns(d, dim - d).into_owned()))
}

/// Curves from PC scores, with contamination drawn from the seeded stream.
pub fn synthesize_curves(truth: &SimTruth, y: &DMatrix<f64>, seed: u64) -> Result<Vec<SpdCurve>> {
    let w = draw_contamination(truth, y.nrows(), &mut stream_rng(seed, Purpose::Contamination, 0));
    synthesize_curves_with(truth, y, Some(&w))
}

pub fn draw_contamination(truth: &SimTruth, n: usize, r: &mut impl Rng) -> Vec<f64> {
    let sd = truth.config.contamination_var.sqrt();
    let normal = Normal::new(0.0, sd.max(0.0)).expect("finite sd");
    (0..n).map(|_| if sd > 0.0 { normal.sample(r) } else { 0.0 }).collect()
}

/// `y_i(t_l) = Exp_{μ(t_l)}(Σ_j Y_ij φ_j(t_l) + W_i φ_{d+1}(t_l))`.
pub fn synthesize_curves_with(truth: &SimTruth, y: &DMatrix<f64>, w: Option<&[f64]>) -> Result<Vec<SpdCurve>> {
    let d = truth.config.d;
    if y.ncols() != d {
        return Err(Error::DimensionMismatch(format!("scores have {} columns, expected {d}", y.ncols())));
    }
    if let Some(w) = w {
        if w.len() != y.nrows() {
            return Err(Error::DimensionMismatch("one contamination value per curve required".into()));
        }
    }
    (0..y.nrows())
        .into_par_iter()
        .map(|i| {
            let mut v = TangentField::zeros(truth.mu.clone());
            for j in 0..d {
                v.axpy(y[(i, j)], &truth.phis[j])?;
            }
            if let Some(w) = w {
                v.axpy(w[i], &truth.phis[d])?;
            }
            exp_curve(&v)
        })
        .collect()
}

/// Metric A: `‖θ/‖θ‖ − θ̂/‖θ̂‖‖`.
pub fn metric_norm_error(theta: &DVector<f64>, theta_hat: &DVector<f64>) -> Result<f64> {
    if theta.len() != theta_hat.len() {
        return Err(Error::DimensionMismatch("canonical vectors differ in length".into()));
    }
    let (a, b) = (theta.norm(), theta_hat.norm());
    if a == 0.0 || b == 0.0 {
        return Err(Error::InvalidArgument("zero canonical vector".into()));
    }
    Ok((theta / a - theta_hat / b).norm())
}

/// Metric B: F1 score of the estimated nonzero pattern against `support`.
pub fn metric_f1(support: &[usize], theta_hat: &DVector<f64>, zero_tol: f64) -> f64 {
    let truth: std::collections::BTreeSet<usize> = support.iter().copied().collect();
    let est: std::collections::BTreeSet<usize> = (0..theta_hat.len()).filter(|&i| theta_hat[i].abs() > zero_tol).collect();
    let tp = truth.intersection(&est).count() as f64;
    let fp = est.len() as f64 - tp;
    let fn_ = truth.len() as f64 - tp;
    if tp + fp == 0.0 || tp + fn_ == 0.0 {
        return 0.0;
    }
    let (prec, rec) = (tp / (tp + fp), tp / (tp + fn_));
    if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    }
}

pub const DEFAULT_ZERO_TOL: f64 = 1e-10;

/// Metric C: `‖Γ_{μ̂,μ} ψ̂ − ψ‖_μ`.
pub fn metric_pt_error(psi: &TangentField, psi_hat: &TangentField) -> Result<f64> {
    let moved = transport_field(psi_hat, psi.base())?;
    field_norm(&moved.sub(psi)?)
}

/// Metric D: correlation of `⟨⟨Log_μ ỹ_i, Γ_{μ̂,μ} ψ̂⟩⟩` with `x̃_iᵀ θ̂`.
pub fn metric_tangent_corr(
    test_curves: &[SpdCurve],
    test_x: &DMatrix<f64>,
    mu: &Arc<SpdCurve>,
    psi_hat: &TangentField,
    theta_hat: &DVector<f64>,
) -> Result<f64> {
    let moved = transport_field(psi_hat, mu)?;
    let u = test_curves
        .par_iter()
        .map(|c| field_inner(&log_curve(mu, c)?, &moved))
        .collect::<Result<Vec<f64>>>()?;
    correlate_with_x(&u, test_x, theta_hat)
}

/// Metric E: correlation of `Σ_l ⟨ỹ_i(t_l), ψ̂(t_l)⟩_F` with `x̃_iᵀ θ̂`.
pub fn metric_euclid_corr(
    test_curves: &[SpdCurve],
    test_x: &DMatrix<f64>,
    psi_hat: &[DMatrix<f64>],
    theta_hat: &DVector<f64>,
) -> Result<f64> {
    let u = test_curves
        .iter()
        .map(|c| {
            if c.len() != psi_hat.len() {
                return Err(Error::DimensionMismatch("test curve and ψ̂ differ in length".into()));
            }
            Ok(c.values().zip(psi_hat).map(|(y, p)| y.as_matrix().dot(p)).sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    correlate_with_x(&u, test_x, theta_hat)
}

fn correlate_with_x(u: &[f64], x: &DMatrix<f64>, theta: &DVector<f64>) -> Result<f64> {
    if x.nrows() != u.len() || x.ncols() != theta.len() {
        return Err(Error::DimensionMismatch("test covariates do not match".into()));
    }
    let v: Vec<f64> = (x * theta).iter().copied().collect();
    pearson(u, &v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Intrinsic RFPCA followed by sparse CCA.
    Rfpca,
    /// Ambient-space FPCA followed by sparse CCA; scored by metric E only.
    Euclidean,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rfpca => "rfpca",
            Method::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rfpca" => Ok(Method::Rfpca),
            "euclidean" => Ok(Method::Euclidean),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOptions {
    pub methods: Vec<Method>,
    pub folds: usize,
    pub grid_len: usize,
    pub grid_ratio: f64,
    pub n_test: usize,
    pub solver: SolverOptions,
}

impl Default for TrialOptions {
    fn default() -> Self {
        TrialOptions {
            methods: vec![Method::Rfpca, Method::Euclidean],
            folds: 5,
            grid_len: crate::grouplasso::DEFAULT_GRID_LEN,
            grid_ratio: crate::grouplasso::DEFAULT_GRID_RATIO,
            n_test: 2000,
            solver: SolverOptions::default(),
        }
    }
}

/// Metric values of one fitted model; absent entries do not apply to the method.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialMetrics {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub e: Option<f64>,
}

impl TrialMetrics {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [("A", self.a), ("B", self.b), ("C", self.c), ("D", self.d), ("E", self.e)]
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k, v)))
            .collect()
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.entries().into_iter().find(|(k, _)| *k == metric).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub method: Method,
    pub n: usize,
    pub trial: usize,
    pub lambda: f64,
    pub outcome: std::result::Result<TrialMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialTable {
    pub records: Vec<TrialRecord>,
}

impl TrialTable {
    pub fn values(&self, method: Method, n: usize, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.method == method && r.n == n)
            .filter_map(|r| r.outcome.as_ref().ok().and_then(|m| m.get(metric)))
            .collect()
    }

    pub fn median(&self, method: Method, n: usize, metric: &str) -> Option<f64> {
        median(&self.values(method, n, metric))
    }

    /// Long format `method,N,trial,metric,value`; a failed fit is one row
    /// with metric `failed` and value 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "N", "trial", "metric", "value"])?;
        for r in &self.records {
            let (method, n, trial) = (r.method.name(), r.n.to_string(), r.trial.to_string());
            match &r.outcome {
                Ok(m) => {
                    for (metric, v) in m.entries() {
                        w.write_record([method, &n, &trial, metric, &format!("{v:.16e}")])?;
                    }
                }
                Err(_) => w.write_record([method, &n, &trial, "failed", "1"])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

/// Training and test draws for one trial.
pub struct TrialData {
    pub curves: Vec<SpdCurve>,
    pub x: DMatrix<f64>,
    pub test_curves: Vec<SpdCurve>,
    pub test_x: DMatrix<f64>,
}

pub fn trial_data(truth: &SimTruth, n: usize, n_test: usize, trial: usize) -> Result<TrialData> {
    let seed = truth.config.seed;
    let idx = trial_index(n, trial);
    let (y, x) = sample_multivariate_with(truth, n, &mut stream_rng(seed, Purpose::Multivariate, idx))?;
    let w = draw_contamination(truth, n, &mut stream_rng(seed, Purpose::Contamination, idx));
    let curves = synthesize_curves_with(truth, &y, Some(&w))?;
    let (ty, test_x) = sample_multivariate_with(truth, n_test, &mut stream_rng(seed, Purpose::TestMultivariate, idx))?;
    let tw = draw_contamination(truth, n_test, &mut stream_rng(seed, Purpose::TestContamination, idx));
    let test_curves = synthesize_curves_with(truth, &ty, Some(&tw))?;
    Ok(TrialData {
        curves,
        x,
        test_curves,
        test_x,
    })
}

/// λ below `λ_max` minimizing the K-fold CV error of the whitened-score regression.
fn cv_lambda(
    scores: &DMatrix<f64>,
    eigenvalues: &[f64],
    x: &DMatrix<f64>,
    seed: u64,
    opts: &TrialOptions,
) -> Result<f64> {
    let xc = center_columns(x, &column_means(x));
    let mut m = scores.clone();
    for (j, w) in eigenvalues.iter().enumerate() {
        m.column_mut(j).scale_mut(1.0 / w.sqrt());
    }
    let grid = lambda_grid(lambda_max(&xc, &m)?, opts.grid_len, opts.grid_ratio);
    let path = cv_path(&xc, &m, &grid, opts.folds, seed, &opts.solver)?;
    // λ_max gives an empty model, which no metric can score
    let best = (1..grid.len())
        .min_by(|&a, &b| path.mean_error[a].total_cmp(&path.mean_error[b]))
        .unwrap_or(0);
    Ok(grid[best])
}

fn evaluate_method(
    truth: &SimTruth,
    data: &TrialData,
    method: Method,
    fold_seed: u64,
    opts: &TrialOptions,
) -> Result<(f64, TrialMetrics)> {
    let d = truth.config.d;
    let fit_opts = FitOptions {
        solver: opts.solver,
        ..FitOptions::default()
    };
    match method {
        Method::Rfpca => {
            let (basis, scores) = rfpca_fit(&data.curves, d)?;
            let lambda = cv_lambda(scores.values(), &basis.eigenvalues, &data.x, fold_seed, opts)?;
            let model = fit_from_basis(basis, &scores, &data.x, lambda, &fit_opts)?;
            if model.k() == 0 {
                return Err(Error::ZeroVariance("no canonical pair retained".into()));
            }
            let theta_hat = model.theta().column(0).into_owned();
            let moved = transport_field(&model.canonical_functions[0], &truth.mu)?;
            // align the estimated pair with the truth through the functional side
            let sign = if field_inner(&moved, &truth.psis[0])? < 0.0 { -1.0 } else { 1.0 };
            let theta_true = truth.thetas.column(0).into_owned();
            let metrics = TrialMetrics {
                a: Some(metric_norm_error(&theta_true, &(&theta_hat * sign))?),
                b: Some(metric_f1(&truth.support, &theta_hat, DEFAULT_ZERO_TOL)),
                c: Some(field_norm(&moved.scale(sign).sub(&truth.psis[0])?)?),
                d: Some(metric_tangent_corr(
                    &data.test_curves,
                    &data.test_x,
                    &truth.mu,
                    &model.canonical_functions[0],
                    &theta_hat,
                )?),
                e: None,
            };
            Ok((lambda, metrics))
        }
        Method::Euclidean => {
            let (grid, m, pca) = euclidean_pca(&data.curves, d)?;
            let lambda = cv_lambda(&pca.scores, &pca.eigenvalues, &data.x, fold_seed, opts)?;
            let model = euclidean_from_pca(grid, m, pca, &data.x, lambda, &fit_opts)?;
            if model.k() == 0 {
                return Err(Error::ZeroVariance("no canonical pair retained".into()));
            }
            let theta_hat = model.theta().column(0).into_owned();
            let e = metric_euclid_corr(&data.test_curves, &data.test_x, &model.canonical_functions[0], &theta_hat)?;
            Ok((
                lambda,
                TrialMetrics {
                    e: Some(e),
                    ..TrialMetrics::default()
                },
            ))
        }
    }
}

/// Runs every method on `n_trials` seeded datasets for each sample size.
///
/// The ground truth is drawn once from `cfg.seed`; each `(N, trial)` gets
/// its own data streams, so results do not depend on scheduling. Failed fits
/// are recorded, not propagated.
pub fn run_trials(cfg: &SimConfig, n_list: &[usize], n_trials: usize, opts: &TrialOptions) -> Result<TrialTable> {
    let truth = make_truth(cfg)?;
    run_trials_with_truth(&truth, n_list, n_trials, opts)
}

pub fn run_trials_with_truth(
    truth: &SimTruth,
    n_list: &[usize],
    n_trials: usize,
    opts: &TrialOptions,
) -> Result<TrialTable> {
    if opts.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    let cells: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..n_trials).map(move |t| (n, t)))
        .collect();
    let records = cells
        .par_iter()
        .map(|&(n, trial)| {
            let data = trial_data(truth, n, opts.n_test, trial);
            let fold_seed = stream_rng(truth.config.seed, Purpose::Folds, trial_index(n, trial)).random::<u64>();
            opts.methods
                .iter()
                .map(|&method| {
                    let result = data
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|data| evaluate_method(truth, data, method, fold_seed, opts).map_err(|e| e.to_string()));
                    if let Err(e) = &result {
                        log::warn!("{} N={n} trial {trial}: {e}", method.name());
                    }
                    let lambda = result.as_ref().map(|r| r.0).unwrap_or(f64::NAN);
                    TrialRecord {
                        method,
                        n,
                        trial,
                        lambda,
                        outcome: result.map(|r| r.1),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(TrialTable { records })
}
