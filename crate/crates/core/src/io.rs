//! File formats: curve and covariate CSV, model artifacts and simulation truth as JSON.
//!
//! Curve CSV: header `subject,t,c11,c12,…,cmm` with the upper triangle in
//! row-major order; one row per (subject, time), rows of a subject
//! contiguous and in increasing `t`. Covariate CSV: `subject,x1,…,xp`.
//! Floats are written with 17 significant digits so files round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cca::CcaModel;
use crate::field::{SpdCurve, TimeGrid};
use crate::pipeline::{EuclideanCcaModel, FunctionalCcaModel, XTransform};
use crate::rfpca::{field_from_coefficients, RfpcaBasis};
use crate::sim::{make_truth, SimConfig, SimTruth};
use crate::spd::SpdMatrix;
use crate::{Error, Result};

pub const ARTIFACT_FORMAT: &str = "asymcca-model";
pub const ARTIFACT_VERSION: &str = "1.0.0";
pub const TRUTH_FORMAT: &str = "asymcca-truth";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: line as usize,
        message: message.into(),
    }
}

/// Value column names for `m × m` matrices.
pub fn curve_value_columns(m: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 1..=m {
        for j in i..=m {
            out.push(if m < 10 { format!("c{i}{j}") } else { format!("c{i}_{j}") });
        }
    }
    out
}

fn matrix_size_from_columns(count: usize) -> Option<usize> {
    let m = (((8 * count + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (m >= 1 && m * (m + 1) / 2 == count).then_some(m)
}

fn parse_float(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what}: cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{what}: non-finite value {field:?}")));
    }
    Ok(v)
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { .. } | csv::ErrorKind::Utf8 { .. } => {
            parse_err(path, line, format!("malformed row: {e}"))
        }
        _ => Error::Csv(e),
    }
}

/// Subject-labelled curves sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub ids: Vec<String>,
    pub curves: Vec<SpdCurve>,
}

impl CurveSet {
    pub fn dim(&self) -> usize {
        self.curves.first().map_or(0, |c| c.dim())
    }

    pub fn grid(&self) -> Option<&TimeGrid> {
        self.curves.first().map(|c| c.grid())
    }
}

pub fn load_curves(path: impl AsRef<Path>) -> Result<CurveSet> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(parse_err(path, 1, "empty file: expected header subject,t,c11,..."));
    }
    if header.len() < 3 || &header[0] != "subject" || &header[1] != "t" {
        return Err(parse_err(path, 1, "header must start with subject,t followed by matrix entries"));
    }
    let m = matrix_size_from_columns(header.len() - 2)
        .ok_or_else(|| parse_err(path, 1, format!("{} value columns is not m(m+1)/2", header.len() - 2)))?;
    let expected = curve_value_columns(m);
    for (k, name) in expected.iter().enumerate() {
        if &header[k + 2] != name {
            return Err(parse_err(path, 1, format!("column {} should be {name}, found {}", k + 3, &header[k + 2])));
        }
    }

    struct Pending {
        id: String,
        times: Vec<f64>,
        values: Vec<(u64, SpdMatrix)>,
    }
    let mut groups: Vec<Pending> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty subject id"));
        }
        let t = parse_float(path, line, &rec[1], "t")?;
        let mut a = DMatrix::zeros(m, m);
        let mut idx = 2;
        for i in 0..m {
            for j in i..m {
                let v = parse_float(path, line, &rec[idx], &expected[idx - 2])?;
                a[(i, j)] = v;
                a[(j, i)] = v;
                idx += 1;
            }
        }
        let start_new = groups.last().is_none_or(|g| g.id != id);
        if start_new {
            if !seen.insert(id.clone()) {
                return Err(parse_err(path, line, format!("duplicate subject {id:?}: rows of a subject must be contiguous")));
            }
            groups.push(Pending {
                id: id.clone(),
                times: vec![],
                values: vec![],
            });
        }
        let g = groups.last_mut().expect("pushed above");
        let time_index = g.times.len();
        if let Some(&prev) = g.times.last() {
            if !(t > prev) {
                return Err(parse_err(path, line, format!("subject {id:?}: times must be strictly increasing")));
            }
        }
        let spd = SpdMatrix::new(a).map_err(|e| {
            parse_err(path, line, format!("subject {id:?}, time index {time_index}: {e}"))
        })?;
        g.times.push(t);
        g.values.push((line, spd));
    }
    let first = groups.first().ok_or_else(|| parse_err(path, 2, "no data rows"))?;
    let grid_points = first.times.clone();
    let grid = TimeGrid::new(grid_points.clone()).map_err(|e| parse_err(path, 2, e.to_string()))?;
    let mut ids = Vec::with_capacity(groups.len());
    let mut curves = Vec::with_capacity(groups.len());
    for g in groups {
        if g.times != grid_points {
            let line = g.values.first().map_or(0, |v| v.0);
            return Err(parse_err(path, line, format!("subject {:?} is observed on a different time grid", g.id)));
        }
        let values = g.values.into_iter().map(|(_, v)| v).collect();
        curves.push(SpdCurve::new(grid.clone(), values)?);
        ids.push(g.id);
    }
    Ok(CurveSet { ids, curves })
}

pub fn write_curves<W: Write>(out: W, ids: &[String], curves: &[SpdCurve]) -> Result<()> {
    if ids.len() != curves.len() {
        return Err(Error::DimensionMismatch("one id per curve required".into()));
    }
    let m = curves.first().map_or(1, |c| c.dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string(), "t".to_string()];
    header.extend(curve_value_columns(m));
    w.write_record(&header)?;
    for (id, c) in ids.iter().zip(curves) {
        if c.dim() != m {
            return Err(Error::DimensionMismatch("curves differ in matrix size".into()));
        }
        for (t, v) in c.grid().points().iter().zip(c.values()) {
            let a = v.as_matrix();
            let mut row = vec![id.clone(), fmt_f64(*t)];
            for i in 0..m {
                for j in i..m {
                    row.push(fmt_f64(a[(i, j)]));
                }
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_curves(path: impl AsRef<Path>, ids: &[String], curves: &[SpdCurve]) -> Result<()> {
    write_curves(BufWriter::new(File::create(path)?), ids, curves)
}

pub fn load_covariates(path: impl AsRef<Path>) -> Result<(Vec<String>, DMatrix<f64>)> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(parse_err(path, 1, "empty file: expected header subject,x1,..."));
    }
    if header.len() < 2 || &header[0] != "subject" {
        return Err(parse_err(path, 1, "header must be subject,x1,...,xp"));
    }
    let p = header.len() - 1;
    for j in 0..p {
        if header[j + 1] != format!("x{}", j + 1) {
            return Err(parse_err(path, 1, format!("column {} should be x{}", j + 2, j + 1)));
        }
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty subject id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("duplicate subject {id:?}")));
        }
        for j in 0..p {
            data.push(parse_float(path, line, &rec[j + 1], &header[j + 1])?);
        }
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    Ok((ids.clone(), DMatrix::from_row_slice(ids.len(), p, &data)))
}

pub fn write_covariates<W: Write>(out: W, ids: &[String], x: &DMatrix<f64>) -> Result<()> {
    if ids.len() != x.nrows() {
        return Err(Error::DimensionMismatch("one id per covariate row required".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string()];
    header.extend((1..=x.ncols()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(x.row(i).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_covariates(path: impl AsRef<Path>, ids: &[String], x: &DMatrix<f64>) -> Result<()> {
    write_covariates(BufWriter::new(File::create(path)?), ids, x)
}

/// Curves and covariates matched by subject, in curve-file order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub curves: Vec<SpdCurve>,
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn load(curves_path: impl AsRef<Path>, covariates_path: impl AsRef<Path>) -> Result<Self> {
        let set = load_curves(&curves_path)?;
        let (xids, x) = load_covariates(&covariates_path)?;
        let index: std::collections::HashMap<&str, usize> =
            xids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut order = Vec::with_capacity(set.ids.len());
        for id in &set.ids {
            match index.get(id.as_str()) {
                Some(&i) => order.push(i),
                None => {
                    return Err(Error::Format(format!(
                        "subject {id:?} has curves but no covariates"
                    )))
                }
            }
        }
        if xids.len() != set.ids.len() {
            let curve_ids: std::collections::HashSet<&str> = set.ids.iter().map(|s| s.as_str()).collect();
            let extra = xids.iter().find(|s| !curve_ids.contains(s.as_str())).expect("sizes differ");
            return Err(Error::Format(format!("subject {extra:?} has covariates but no curves")));
        }
        Ok(Dataset {
            ids: set.ids,
            curves: set.curves,
            x: x.select_rows(order.iter()),
        })
    }

    /// `(N, L, m, p)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let (l, m) = self.curves.first().map_or((0, 0), |c| (c.len(), c.dim()));
        (self.curves.len(), l, m, self.x.ncols())
    }
}

/// Dense matrix with explicit shape and row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(a: &DMatrix<f64>) -> Self {
        MatrixJson {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.transpose().iter().copied().collect(),
        }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format(format!(
                "matrix declares {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

fn matrices(list: &[MatrixJson]) -> Result<Vec<DMatrix<f64>>> {
    list.iter().map(MatrixJson::to_matrix).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaJson {
    pub t: MatrixJson,
    pub h: MatrixJson,
    pub correlations: Vec<f64>,
    pub b: MatrixJson,
    pub lambda: f64,
    pub tied: bool,
}

impl From<&CcaModel> for CcaJson {
    fn from(c: &CcaModel) -> Self {
        CcaJson {
            t: (&c.t).into(),
            h: (&c.h).into(),
            correlations: c.correlations.clone(),
            b: (&c.b).into(),
            lambda: c.lambda,
            tied: c.tied,
        }
    }
}

impl CcaJson {
    pub fn to_model(&self) -> Result<CcaModel> {
        let model = CcaModel {
            t: self.t.to_matrix()?,
            h: self.h.to_matrix()?,
            correlations: self.correlations.clone(),
            b: self.b.to_matrix()?,
            lambda: self.lambda,
            tied: self.tied,
        };
        if model.t.ncols() != model.k() || model.h.ncols() != model.k() {
            return Err(Error::Format("canonical vectors do not match the number of correlations".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XTransformJson {
    pub means: Vec<f64>,
    pub scales: Option<Vec<f64>>,
}

impl From<&XTransform> for XTransformJson {
    fn from(t: &XTransform) -> Self {
        XTransformJson {
            means: t.means.iter().copied().collect(),
            scales: t.scales.as_ref().map(|s| s.iter().copied().collect()),
        }
    }
}

impl XTransformJson {
    fn to_transform(&self) -> XTransform {
        XTransform {
            means: DVector::from_column_slice(&self.means),
            scales: self.scales.as_ref().map(|s| DVector::from_column_slice(s)),
        }
    }
}

/// Intrinsic model: mean curve, frame coefficients of the components and the CCA fit.
/// Component fields and canonical functions are rebuilt from these on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalModelJson {
    pub grid: Vec<f64>,
    pub mean_curve: Vec<MatrixJson>,
    pub eigenvalues: Vec<f64>,
    pub coefficient_mean: MatrixJson,
    pub coefficient_components: Vec<MatrixJson>,
    pub cca: CcaJson,
    pub x_transform: XTransformJson,
}

impl From<&FunctionalCcaModel> for FunctionalModelJson {
    fn from(m: &FunctionalCcaModel) -> Self {
        let mean = &m.basis.mean_curve;
        FunctionalModelJson {
            grid: mean.grid().points().to_vec(),
            mean_curve: mean.values().map(|v| v.as_matrix().into()).collect(),
            eigenvalues: m.basis.eigenvalues.clone(),
            coefficient_mean: (&m.basis.coefficient_mean).into(),
            coefficient_components: m.basis.coefficient_components.iter().map(Into::into).collect(),
            cca: (&m.cca).into(),
            x_transform: (&m.x_transform).into(),
        }
    }
}

impl FunctionalModelJson {
    pub fn to_model(&self) -> Result<FunctionalCcaModel> {
        let grid = TimeGrid::new(self.grid.clone())?;
        let values = matrices(&self.mean_curve)?
            .into_iter()
            .map(SpdMatrix::new)
            .collect::<Result<Vec<_>>>()?;
        let mean = Arc::new(SpdCurve::new(grid, values)?);
        let coefficient_components = matrices(&self.coefficient_components)?;
        let components = coefficient_components
            .iter()
            .map(|pi| field_from_coefficients(&mean, pi))
            .collect::<Result<Vec<_>>>()?;
        if self.eigenvalues.len() != components.len() {
            return Err(Error::Format("eigenvalues do not match the number of components".into()));
        }
        let basis = RfpcaBasis {
            mean_curve: mean,
            components,
            eigenvalues: self.eigenvalues.clone(),
            coefficient_components,
            coefficient_mean: self.coefficient_mean.to_matrix()?,
        };
        let cca = self.cca.to_model()?;
        if cca.h.nrows() != basis.rank() {
            return Err(Error::Format("CCA loadings do not match the basis rank".into()));
        }
        let canonical_functions = (0..cca.k())
            .map(|k| basis.combine(&cca.h.column(k).iter().copied().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        Ok(FunctionalCcaModel {
            basis,
            cca,
            canonical_functions,
            x_transform: self.x_transform.to_transform(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclideanModelJson {
    pub grid: Vec<f64>,
    pub matrix_size: usize,
    pub eigenvalues: Vec<f64>,
    pub coefficient_mean: MatrixJson,
    pub coefficient_components: Vec<MatrixJson>,
    pub cca: CcaJson,
    pub x_transform: XTransformJson,
}

impl From<&EuclideanCcaModel> for EuclideanModelJson {
    fn from(m: &EuclideanCcaModel) -> Self {
        EuclideanModelJson {
            grid: m.grid.points().to_vec(),
            matrix_size: m.mean.first().map_or(0, |a| a.nrows()),
            eigenvalues: m.eigenvalues.clone(),
            coefficient_mean: (&m.coefficient_mean).into(),
            coefficient_components: m.coefficient_components.iter().map(Into::into).collect(),
            cca: (&m.cca).into(),
            x_transform: (&m.x_transform).into(),
        }
    }
}

impl EuclideanModelJson {
    pub fn to_model(&self) -> Result<EuclideanCcaModel> {
        let grid = TimeGrid::new(self.grid.clone())?;
        let pca = crate::rfpca::Mfpca {
            mean: self.coefficient_mean.to_matrix()?,
            components: matrices(&self.coefficient_components)?,
            eigenvalues: self.eigenvalues.clone(),
            scores: DMatrix::zeros(0, self.eigenvalues.len()),
        };
        let cca = self.cca.to_model()?;
        Ok(crate::pipeline::euclidean_with_cca(
            grid,
            self.matrix_size,
            pca,
            cca,
            self.x_transform.to_transform(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum ModelPayload {
    Functional(FunctionalModelJson),
    Euclidean(EuclideanModelJson),
    Multivariate(CcaJson),
}

impl ModelPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelPayload::Functional(_) => "functional",
            ModelPayload::Euclidean(_) => "euclidean",
            ModelPayload::Multivariate(_) => "multivariate",
        }
    }
}

/// Versioned model file with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    #[serde(flatten)]
    pub payload: ModelPayload,
}

/// SHA-256 of the compact JSON form of `config` (object keys sorted).
pub fn config_hash(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("JSON values always serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl ModelArtifact {
    pub fn new(payload: ModelPayload, config: serde_json::Value, seed: Option<u64>) -> Self {
        ModelArtifact {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION.into(),
            config_hash: config_hash(&config),
            seed,
            config,
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        check_header(&raw, ARTIFACT_FORMAT)?;
        let artifact: ModelArtifact = serde_json::from_value(raw)?;
        if artifact.config_hash != config_hash(&artifact.config) {
            return Err(Error::Format("config_hash does not match the stored config".into()));
        }
        Ok(artifact)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_header(raw: &serde_json::Value, format: &str) -> Result<()> {
    let found = raw.get("format").and_then(|v| v.as_str());
    if found != Some(format) {
        return Err(Error::Format(format!("not an {format} file (format {found:?})")));
    }
    let version = raw
        .get("version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::Format("missing version".into()))?;
    let major = version.split('.').next().unwrap_or("");
    let supported = ARTIFACT_VERSION.split('.').next().expect("constant");
    if major != supported {
        return Err(Error::Format(format!(
            "unsupported {format} version {version}; this build reads {supported}.x"
        )));
    }
    Ok(())
}

/// Simulation ground truth; the generator is rebuilt from `config` and checked
/// against the stored arrays on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub config: SimConfig,
    pub grid: Vec<f64>,
    pub mu: Vec<MatrixJson>,
    pub phi_pairs: Vec<(usize, usize)>,
    pub etas: MatrixJson,
    pub thetas: MatrixJson,
    pub support: Vec<usize>,
    pub gamma: Vec<f64>,
}

impl TruthFile {
    pub fn from_truth(truth: &SimTruth) -> Result<Self> {
        let config_value = serde_json::to_value(&truth.config)?;
        Ok(TruthFile {
            format: TRUTH_FORMAT.into(),
            version: ARTIFACT_VERSION.into(),
            config_hash: config_hash(&config_value),
            config: truth.config.clone(),
            grid: truth.mu.grid().points().to_vec(),
            mu: truth.mu.values().map(|v| v.as_matrix().into()).collect(),
            phi_pairs: truth.phi_pairs.clone(),
            etas: (&truth.etas).into(),
            thetas: (&truth.thetas).into(),
            support: truth.support.clone(),
            gamma: truth.config.gamma.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: serde_json::Value = serde_json::from_str(&text)?;
        check_header(&raw, TRUTH_FORMAT)?;
        Ok(serde_json::from_value(raw)?)
    }

    pub fn to_truth(&self) -> Result<SimTruth> {
        let truth = make_truth(&self.config)?;
        if truth.thetas != self.thetas.to_matrix()? || truth.etas != self.etas.to_matrix()? {
            return Err(Error::Format("stored truth does not match its generator config".into()));
        }
        Ok(truth)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn handcrafted_fixture_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            &dir,
            "curves.csv",
            "subject,t,c11,c12,c22\n\
             a,0,2,0.5,1\n\
             a,1,3,0,1\n\
             b,0,1,0,1\n\
             b,1,4,-1,2\n",
        );
        let set = load_curves(&path).unwrap();
        assert_eq!(set.ids, vec!["a", "b"]);
        assert_eq!(set.grid().unwrap().points(), &[0.0, 1.0]);
        assert_eq!(
            set.curves[0].value(0).as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])
        );
        assert_eq!(
            set.curves[1].value(1).as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[4.0, -1.0, -1.0, 2.0])
        );
    }

    fn expect_parse_error(result: Result<impl std::fmt::Debug>, line: usize, needle: &str) {
        match result {
            Err(Error::Parse { line: l, message, .. }) => {
                assert_eq!(l, line, "{message}");
                assert!(message.contains(needle), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn loader_errors() {
        let dir = tempfile::tempdir().unwrap();
        expect_parse_error(load_curves(write_file(&dir, "e.csv", "")), 1, "empty");
        expect_parse_error(
            load_curves(write_file(&dir, "d.csv", "subject,t,c11\na,0,1\na,1,1\nb,0,1\nb,1,1\na,0,1\n")),
            6,
            "duplicate",
        );
        expect_parse_error(
            load_curves(write_file(&dir, "n.csv", "subject,t,c11,c12,c22\na,0,1,0,1\na,1,1,2,1\n")),
            3,
            "time index 1",
        );
        expect_parse_error(
            load_curves(write_file(&dir, "g.csv", "subject,t,c11\na,0,1\na,1,1\nb,0,1\nb,2,1\n")),
            4,
            "different time grid",
        );
        expect_parse_error(
            load_curves(write_file(&dir, "x.csv", "subject,t,c11\na,0,1\na,1,oops\n")),
            3,
            "cannot parse",
        );
        expect_parse_error(load_curves(write_file(&dir, "h.csv", "subject,t,c11,c12\n")), 1, "m(m+1)/2");
        expect_parse_error(
            load_curves(write_file(&dir, "r.csv", "subject,t,c11\na,0,1,5\n")),
            2,
            "malformed",
        );
        expect_parse_error(load_covariates(write_file(&dir, "ce.csv", "")), 1, "empty");
        expect_parse_error(
            load_covariates(write_file(&dir, "cd.csv", "subject,x1\na,1\na,2\n")),
            3,
            "duplicate",
        );
    }

    #[test]
    fn curves_and_covariates_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TimeGrid::new(vec![-1.0, 0.1, 1.0 / 3.0]).unwrap();
        let a = SpdMatrix::from_row_slice(2, &[std::f64::consts::PI, 0.01, 0.01, 1e-3]).unwrap();
        let b = SpdMatrix::from_row_slice(2, &[1.0 / 7.0, -0.01, -0.01, 2.5]).unwrap();
        let c1 = SpdCurve::new(grid.clone(), vec![a.clone(), b.clone(), a.clone()]).unwrap();
        let c2 = SpdCurve::new(grid, vec![b.clone(), a, b]).unwrap();
        let ids = vec!["s1".to_string(), "s2".to_string()];
        let path = dir.path().join("c.csv");
        save_curves(&path, &ids, &[c1.clone(), c2.clone()]).unwrap();
        let set = load_curves(&path).unwrap();
        assert_eq!(set.curves, vec![c1, c2]);
        let x = DMatrix::from_row_slice(2, 3, &[0.1, 1.0 / 3.0, -2.0, 1e-300, 5.0, 7.25]);
        let xpath = dir.path().join("x.csv");
        save_covariates(&xpath, &ids, &x).unwrap();
        let (xids, back) = load_covariates(&xpath).unwrap();
        assert_eq!(xids, ids);
        assert_eq!(back, x);
    }

    #[test]
    fn dataset_matches_subjects() {
        let dir = tempfile::tempdir().unwrap();
        let curves = write_file(&dir, "c.csv", "subject,t,c11\na,0,1\na,1,2\nb,0,3\nb,1,4\n");
        let x = write_file(&dir, "x.csv", "subject,x1,x2\nb,1,2\na,3,4\n");
        let ds = Dataset::load(&curves, &x).unwrap();
        assert_eq!(ds.x, DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 1.0, 2.0]));
        assert_eq!(ds.shape(), (2, 2, 1, 2));
        let missing = write_file(&dir, "x2.csv", "subject,x1\na,1\n");
        assert!(Dataset::load(&curves, &missing).is_err());
        let extra = write_file(&dir, "x3.csv", "subject,x1\na,1\nb,2\nc,3\n");
        assert!(Dataset::load(&curves, &extra).is_err());
    }

    #[test]
    fn matrix_json_is_row_major() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let j = MatrixJson::from(&a);
        assert_eq!(j.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(j.to_matrix().unwrap(), a);
        let bad = MatrixJson { rows: 2, cols: 2, data: vec![1.0] };
        assert!(bad.to_matrix().is_err());
    }

    #[test]
    fn artifact_version_gate() {
        let cca = CcaModel {
            t: DMatrix::from_row_slice(2, 1, &[0.1, 0.2]),
            h: DMatrix::from_row_slice(1, 1, &[1.0]),
            correlations: vec![0.5],
            b: DMatrix::zeros(0, 0),
            lambda: 0.0,
            tied: false,
        };
        let art = ModelArtifact::new(
            ModelPayload::Multivariate((&cca).into()),
            serde_json::json!({"lambda": 0.0}),
            Some(3),
        );
        let text = art.to_json().unwrap();
        let back = ModelArtifact::from_json(&text).unwrap();
        assert_eq!(back.to_json().unwrap(), text);
        assert!(text.contains("\"kind\": \"multivariate\""));
        let future = text.replace("\"version\": \"1.0.0\"", "\"version\": \"2.0.0\"");
        assert!(matches!(ModelArtifact::from_json(&future), Err(Error::Format(_))));
        let minor = text.replace("\"version\": \"1.0.0\"", "\"version\": \"1.3.0\"");
        assert!(ModelArtifact::from_json(&minor).is_ok());
        let tampered = text.replace("\"lambda\": 0.0\n  }", "\"lambda\": 1.0\n  }");
        assert_ne!(tampered, text);
        assert!(ModelArtifact::from_json(&tampered).is_err());
    }

    #[test]
    fn config_hash_is_key_order_independent() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
