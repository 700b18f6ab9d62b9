//! SPD-valued curves on a time grid and tangent vector fields along them.
//!
//! A [`TangentField`] holds one symmetric matrix per grid point together with
//! the curve it is attached to. Fields along the same curve form the space
//! `L²(Tμ)` with inner product `∫ ⟨U(t), V(t)⟩_{μ(t)} dt`, approximated with
//! trapezoid weights.

use std::sync::Arc;

use crate::spd::{BasePoint, SpdMatrix, SymMatrix};
use crate::{Error, Result};

/// Strictly increasing time points with trapezoid quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "time grid must be finite and strictly increasing".into(),
            ));
        }
        let l = points.len();
        let mut weights = vec![0.0; l];
        for i in 0..l - 1 {
            let h = 0.5 * (points[i + 1] - points[i]);
            weights[i] += h;
            weights[i + 1] += h;
        }
        Ok(TimeGrid { points, weights })
    }

    /// `len` equispaced points from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, len: usize) -> Result<Self> {
        if len < 2 || !(end > start) {
            return Err(Error::InvalidArgument(format!(
                "uniform grid on [{start}, {end}] with {len} points"
            )));
        }
        let step = (end - start) / (len - 1) as f64;
        let mut points: Vec<f64> = (0..len).map(|i| start + step * i as f64).collect();
        points[len - 1] = end;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn span(&self) -> f64 {
        self.points[self.points.len() - 1] - self.points[0]
    }
}

/// One SPD matrix per grid point.
///
/// Square roots of every value are computed at construction, so an
/// ill-conditioned value is rejected here rather than deep inside a fit.
#[derive(Debug, Clone)]
pub struct SpdCurve {
    grid: TimeGrid,
    points: Vec<BasePoint>,
}

impl PartialEq for SpdCurve {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| a.point() == b.point())
    }
}

impl SpdCurve {
    pub fn new(grid: TimeGrid, values: Vec<SpdMatrix>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} points but curve has {} values",
                grid.len(),
                values.len()
            )));
        }
        let m = values[0].dim();
        let mut points = Vec::with_capacity(values.len());
        for (l, v) in values.into_iter().enumerate() {
            if v.dim() != m {
                return Err(Error::AtTime {
                    index: l,
                    source: Box::new(Error::DimensionMismatch(format!("{m}x{m} vs {0}x{0}", v.dim()))),
                });
            }
            points.push(v.base_point().map_err(|e| Error::AtTime {
                index: l,
                source: Box::new(e),
            })?);
        }
        Ok(SpdCurve { grid, points })
    }

    /// The same matrix at every grid point.
    pub fn constant(grid: TimeGrid, value: SpdMatrix) -> Result<Self> {
        let values = vec![value; grid.len()];
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn value(&self, l: usize) -> &SpdMatrix {
        self.points[l].point()
    }

    pub fn values(&self) -> impl Iterator<Item = &SpdMatrix> {
        self.points.iter().map(BasePoint::point)
    }

    pub fn base_points(&self) -> &[BasePoint] {
        &self.points
    }

    fn check_compatible(&self, other: &SpdCurve) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::DimensionMismatch("curves live on different time grids".into()));
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "curve values are {0}x{0} vs {1}x{1}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// A vector field `t ↦ V(t) ∈ T_{μ(t)}M` along a base curve `μ`.
#[derive(Debug, Clone)]
pub struct TangentField {
    base: Arc<SpdCurve>,
    values: Vec<SymMatrix>,
}

impl TangentField {
    pub fn new(base: Arc<SpdCurve>, values: Vec<SymMatrix>) -> Result<Self> {
        if values.len() != base.len() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values on a curve of length {}",
                values.len(),
                base.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| v.dim() != base.dim()) {
            return Err(Error::DimensionMismatch(format!(
                "field value is {0}x{0} on a curve of {1}x{1} matrices",
                v.dim(),
                base.dim()
            )));
        }
        Ok(TangentField { base, values })
    }

    pub fn zeros(base: Arc<SpdCurve>) -> Self {
        let values = vec![SymMatrix::zeros(base.dim()); base.len()];
        TangentField { base, values }
    }

    pub fn base(&self) -> &Arc<SpdCurve> {
        &self.base
    }

    pub fn grid(&self) -> &TimeGrid {
        self.base.grid()
    }

    pub fn values(&self) -> &[SymMatrix] {
        &self.values
    }

    pub fn value(&self, l: usize) -> &SymMatrix {
        &self.values[l]
    }

    pub fn scale(&self, c: f64) -> TangentField {
        TangentField {
            base: self.base.clone(),
            values: self.values.iter().map(|v| v.scale(c)).collect(),
        }
    }

    /// `self += c * other`; both fields must share their base curve.
    pub fn axpy(&mut self, c: f64, other: &TangentField) -> Result<()> {
        check_same_base(self, other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.axpy(c, b);
        }
        Ok(())
    }

    pub fn sub(&self, other: &TangentField) -> Result<TangentField> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }
}

fn check_same_base(u: &TangentField, v: &TangentField) -> Result<()> {
    if Arc::ptr_eq(&u.base, &v.base) || *u.base == *v.base {
        Ok(())
    } else {
        Err(Error::DimensionMismatch("fields live along different base curves".into()))
    }
}

/// `t ↦ Log_{μ(t)} y(t)`.
pub fn log_curve(mu: &Arc<SpdCurve>, y: &SpdCurve) -> Result<TangentField> {
    mu.check_compatible(y)?;
    let values = mu
        .points
        .iter()
        .zip(y.values())
        .enumerate()
        .map(|(l, (base, v))| {
            base.log(v).map_err(|e| Error::AtTime {
                index: l,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TangentField {
        base: mu.clone(),
        values,
    })
}

/// `t ↦ Exp_{μ(t)} V(t)` where `μ` is the base of `v`.
pub fn exp_curve(v: &TangentField) -> Result<SpdCurve> {
    let values = v
        .base
        .points
        .iter()
        .zip(&v.values)
        .map(|(base, w)| base.exp(w))
        .collect::<Result<Vec<_>>>()?;
    SpdCurve::new(v.grid().clone(), values)
}

/// `⟨⟨U, V⟩⟩_μ ≈ Σ_l w_l ⟨U(t_l), V(t_l)⟩_{μ(t_l)}`.
pub fn field_inner(u: &TangentField, v: &TangentField) -> Result<f64> {
    check_same_base(u, v)?;
    let weights = u.grid().weights();
    let mut acc = 0.0;
    for (l, base) in u.base.points.iter().enumerate() {
        acc += weights[l] * base.inner(&u.values[l], &v.values[l])?;
    }
    Ok(acc)
}

pub fn field_norm(u: &TangentField) -> Result<f64> {
    Ok(field_inner(u, u)?.max(0.0).sqrt())
}

/// Pointwise parallel transport of a field along `f` to a field along `h`.
pub fn transport_field(u: &TangentField, h: &Arc<SpdCurve>) -> Result<TangentField> {
    u.base.check_compatible(h)?;
    let values = u
        .base
        .points
        .iter()
        .zip(h.values())
        .zip(&u.values)
        .map(|((from, to), w)| from.transport(to, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(TangentField {
        base: h.clone(),
        values,
    })
}
