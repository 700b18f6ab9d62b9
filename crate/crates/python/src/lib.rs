//! Python bindings. Matrices cross the boundary as lists of rows; a set of
//! curves is a list of subjects, each a list of `m × m` matrices on a shared grid.

use asymcca::cca::{self, CcaModel};
use asymcca::field::{SpdCurve, TimeGrid};
use asymcca::grouplasso::{self, GroupLasso, SolverOptions};
use asymcca::io::{FunctionalModelJson, ModelArtifact, ModelPayload};
use asymcca::pipeline::{self, FitOptions, FunctionalCcaModel};
use asymcca::sim::{self, SimConfig};
use asymcca::spd::{self, FrechetOptions, SpdMatrix, SymMatrix};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(asymcca_py, NumericError, PyRuntimeError, "A numerical routine failed to converge or met a degenerate input.");

type Rows = Vec<Vec<f64>>;

fn to_py(e: asymcca::Error) -> PyErr {
    if e.is_numeric() {
        NumericError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(a: &DMatrix<f64>) -> Rows {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn spd_matrix(r: &Rows) -> PyResult<SpdMatrix> {
    SpdMatrix::new(matrix(r)?).map_err(to_py)
}

fn sym_matrix(r: &Rows) -> PyResult<SymMatrix> {
    SymMatrix::new(matrix(r)?).map_err(to_py)
}

fn curves(grid: &[f64], subjects: &[Vec<Rows>]) -> PyResult<Vec<SpdCurve>> {
    let grid = TimeGrid::new(grid.to_vec()).map_err(to_py)?;
    subjects
        .iter()
        .map(|values| {
            let values = values.iter().map(spd_matrix).collect::<PyResult<Vec<_>>>()?;
            SpdCurve::new(grid.clone(), values).map_err(to_py)
        })
        .collect()
}

fn curve_rows(c: &SpdCurve) -> Vec<Rows> {
    c.values().map(|v| rows(v.as_matrix())).collect()
}

/// `Exp_P(W)` under the affine-invariant metric.
#[pyfunction]
fn riem_exp(p: Rows, w: Rows) -> PyResult<Rows> {
    let q = spd::riem_exp(&spd_matrix(&p)?, &sym_matrix(&w)?).map_err(to_py)?;
    Ok(rows(q.as_matrix()))
}

/// `Log_P(Q)`.
#[pyfunction]
fn riem_log(p: Rows, q: Rows) -> PyResult<Rows> {
    let w = spd::riem_log(&spd_matrix(&p)?, &spd_matrix(&q)?).map_err(to_py)?;
    Ok(rows(w.as_matrix()))
}

#[pyfunction]
fn riem_dist(p: Rows, q: Rows) -> PyResult<f64> {
    spd::riem_dist(&spd_matrix(&p)?, &spd_matrix(&q)?).map_err(to_py)
}

/// Parallel transport of `W` from `P` to `Q` along the geodesic.
#[pyfunction]
fn parallel_transport(p: Rows, q: Rows, w: Rows) -> PyResult<Rows> {
    let v = spd::parallel_transport(&spd_matrix(&p)?, &spd_matrix(&q)?, &sym_matrix(&w)?).map_err(to_py)?;
    Ok(rows(v.as_matrix()))
}

#[pyfunction]
fn frechet_mean(points: Vec<Rows>) -> PyResult<Rows> {
    let points = points.iter().map(spd_matrix).collect::<PyResult<Vec<_>>>()?;
    let mean = spd::frechet_mean(&points, FrechetOptions::default()).map_err(to_py)?;
    Ok(rows(mean.as_matrix()))
}

/// Smallest λ at which the group-lasso solution is zero.
#[pyfunction]
fn lambda_max(x: Rows, m: Rows) -> PyResult<f64> {
    grouplasso::lambda_max(&matrix(&x)?, &matrix(&m)?).map_err(to_py)
}

/// Minimizer of `(2/N)‖M − XB‖² + λ Σ‖b_i‖`; raises `NumericError` without convergence.
#[pyfunction]
fn group_lasso(x: Rows, m: Rows, lam: f64) -> PyResult<Rows> {
    let problem = GroupLasso::new(&matrix(&x)?, &matrix(&m)?).map_err(to_py)?;
    let sol = problem.solve(lam, &SolverOptions::default(), None).map_err(to_py)?;
    Ok(rows(&sol.coef))
}

/// Canonical pairs between `Y` (`N × d`) and `X` (`N × p`); columns of `t` act on `X`.
#[pyclass(frozen, module = "asymcca_py")]
struct CcaResult {
    inner: CcaModel,
}

#[pymethods]
impl CcaResult {
    #[getter]
    fn correlations(&self) -> Vec<f64> {
        self.inner.correlations.clone()
    }

    #[getter]
    fn t(&self) -> Rows {
        rows(&self.inner.t)
    }

    #[getter]
    fn h(&self) -> Rows {
        rows(&self.inner.h)
    }

    #[getter]
    fn tied(&self) -> bool {
        self.inner.tied
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// Row indices of `X` with a nonzero canonical weight.
    fn support(&self) -> Vec<usize> {
        self.inner.support(sim::DEFAULT_ZERO_TOL)
    }
}

/// Asymmetric sparse CCA; inputs should be column-centered.
#[pyfunction]
fn sparse_cca(y: Rows, x: Rows, lam: f64) -> PyResult<CcaResult> {
    let inner = cca::sparse_cca(&matrix(&y)?, &matrix(&x)?, lam, &SolverOptions::default()).map_err(to_py)?;
    Ok(CcaResult { inner })
}

#[pyfunction]
fn classical_cca(y: Rows, x: Rows) -> PyResult<CcaResult> {
    let inner = cca::classical_cca(&matrix(&y)?, &matrix(&x)?).map_err(to_py)?;
    Ok(CcaResult { inner })
}

/// One simulated training set with its ground truth.
#[pyclass(frozen, module = "asymcca_py")]
struct Simulation {
    #[pyo3(get)]
    grid: Vec<f64>,
    #[pyo3(get)]
    curves: Vec<Vec<Rows>>,
    #[pyo3(get)]
    x: Rows,
    #[pyo3(get)]
    thetas: Rows,
    #[pyo3(get)]
    support: Vec<usize>,
    #[pyo3(get)]
    gamma: Vec<f64>,
}

/// Draws `n` subjects. `config` is a JSON object overriding generator defaults.
#[pyfunction]
#[pyo3(signature = (n, seed = 0, config = None))]
fn simulate(n: usize, seed: u64, config: Option<&str>) -> PyResult<Simulation> {
    let mut cfg: SimConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("config: {e}")))?,
        None => SimConfig::default(),
    };
    cfg.seed = seed;
    let truth = sim::make_truth(&cfg).map_err(to_py)?;
    let (y, x) = sim::sample_multivariate(&truth, n, seed).map_err(to_py)?;
    let curves = sim::synthesize_curves(&truth, &y, seed).map_err(to_py)?;
    Ok(Simulation {
        grid: truth.mu.grid().points().to_vec(),
        curves: curves.iter().map(curve_rows).collect(),
        x: rows(&x),
        thetas: rows(&truth.thetas),
        support: truth.support.clone(),
        gamma: cfg.gamma.clone(),
    })
}

/// Functional CCA between SPD-matrix curves and covariates.
#[pyclass(frozen, module = "asymcca_py")]
struct FunctionalCca {
    inner: FunctionalCcaModel,
    lambda: f64,
}

#[pymethods]
impl FunctionalCca {
    /// Fits with rank `d` and penalty `lam`.
    #[staticmethod]
    #[pyo3(signature = (grid, curves, x, d, lam, center_x = true, scale_x = false))]
    fn fit(
        grid: Vec<f64>,
        curves: Vec<Vec<Rows>>,
        x: Rows,
        d: usize,
        lam: f64,
        center_x: bool,
        scale_x: bool,
    ) -> PyResult<Self> {
        let curves = self::curves(&grid, &curves)?;
        let opts = FitOptions {
            center_x,
            scale_x,
            ..FitOptions::default()
        };
        let inner = pipeline::fit_with_options(&curves, &matrix(&x)?, d, lam, &opts).map_err(to_py)?;
        Ok(FunctionalCca { inner, lambda: lam })
    }

    /// Chooses rank and penalty by K-fold cross-validation, then refits on all subjects.
    #[staticmethod]
    #[pyo3(signature = (grid, curves, x, max_rank = 10, folds = 5, seed = 0))]
    fn fit_cv(grid: Vec<f64>, curves: Vec<Vec<Rows>>, x: Rows, max_rank: usize, folds: usize, seed: u64) -> PyResult<Self> {
        let curves = self::curves(&grid, &curves)?;
        let x = matrix(&x)?;
        let d_grid: Vec<usize> = (1..=max_rank).collect();
        let out = pipeline::fit_cv(&curves, &x, &d_grid, None, folds, seed, &FitOptions::default()).map_err(to_py)?;
        Ok(FunctionalCca {
            inner: out.model,
            lambda: out.chosen_lambda,
        })
    }

    /// Number of retained canonical pairs.
    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.lambda
    }

    #[getter]
    fn correlations(&self) -> Vec<f64> {
        self.inner.cca.correlations.clone()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.basis.eigenvalues.clone()
    }

    /// Canonical vectors on raw covariates, `p × K`.
    #[getter]
    fn theta(&self) -> Rows {
        rows(&self.inner.theta())
    }

    #[getter]
    fn mean_curve(&self) -> Vec<Rows> {
        curve_rows(self.inner.mean_curve())
    }

    /// Values of `ψ̂_k` (k from 1) at each grid point.
    fn canonical_function(&self, k: usize) -> PyResult<Vec<Rows>> {
        if k == 0 || k > self.inner.k() {
            return Err(PyValueError::new_err(format!("pair {k} requested, model has {}", self.inner.k())));
        }
        Ok(self.inner.canonical_functions[k - 1]
            .values()
            .iter()
            .map(|v| rows(v.as_matrix()))
            .collect())
    }

    /// `N × K` canonical variates of the functional side.
    fn functional_variates(&self, curves: Vec<Vec<Rows>>) -> PyResult<Rows> {
        let curves = self::curves(self.inner.mean_curve().grid().points(), &curves)?;
        Ok(rows(&self.inner.functional_variates(&curves).map_err(to_py)?))
    }

    /// `N × K` canonical variates of the covariate side.
    fn covariate_variates(&self, x: Rows) -> PyResult<Rows> {
        Ok(rows(&self.inner.covariate_variates(&matrix(&x)?).map_err(to_py)?))
    }

    /// Curves `Exp_μ̂(±c ψ̂_k)`.
    #[pyo3(signature = (k, c = 1.0))]
    fn mode(&self, k: usize, c: f64) -> PyResult<(Vec<Rows>, Vec<Rows>)> {
        let (plus, minus) = pipeline::mode_extremes(&self.inner, k, c).map_err(to_py)?;
        Ok((curve_rows(&plus), curve_rows(&minus)))
    }

    /// Versioned JSON artifact, readable by the command-line tool.
    fn to_json(&self) -> PyResult<String> {
        let config = serde_json::json!({
            "method": "rfpca",
            "rank": self.inner.rank(),
            "lambda": self.lambda,
        });
        let artifact = ModelArtifact::new(ModelPayload::Functional(FunctionalModelJson::from(&self.inner)), config, None);
        artifact.to_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let artifact = ModelArtifact::from_json(text).map_err(to_py)?;
        let lambda = artifact.config.get("lambda").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
        match &artifact.payload {
            ModelPayload::Functional(m) => Ok(FunctionalCca {
                inner: m.to_model().map_err(to_py)?,
                lambda,
            }),
            other => Err(PyValueError::new_err(format!("expected a functional model, found {}", other.kind()))),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "FunctionalCca(rank={}, k={}, lam={:e}, correlations={:?})",
            self.inner.rank(),
            self.inner.k(),
            self.lambda,
            self.inner.cca.correlations
        )
    }
}

#[pymodule]
fn asymcca_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    m.add_class::<CcaResult>()?;
    m.add_class::<Simulation>()?;
    m.add_class::<FunctionalCca>()?;
    m.add_function(wrap_pyfunction!(riem_exp, m)?)?;
    m.add_function(wrap_pyfunction!(riem_log, m)?)?;
    m.add_function(wrap_pyfunction!(riem_dist, m)?)?;
    m.add_function(wrap_pyfunction!(parallel_transport, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_mean, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_max, m)?)?;
    m.add_function(wrap_pyfunction!(group_lasso, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_cca, m)?)?;
    m.add_function(wrap_pyfunction!(classical_cca, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
