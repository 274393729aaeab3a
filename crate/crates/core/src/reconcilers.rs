//! One-shot reconciliation through a `G` matrix: `ỹ = S·G·ŷ`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{
    sample_covariance, shrinkage_covariance, structural_weights, variance_weights, CovarianceError,
    CovarianceEstimate, ResidualPanel,
};
use crate::hierarchy::StructureMatrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReconcileError {
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("weight matrix has non-positive variance for series {0}")]
    NonPositiveVariance(usize),
    #[error("weight matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("weight matrix is numerically singular (condition estimate {condition:.3e})")]
    IllConditionedWeights { condition: f64 },
    #[error("S'W^-1 S is singular: structure matrix lacks full column rank")]
    StructuralRank,
    #[error("method {0} needs in-sample residuals")]
    MissingResiduals(Method),
    #[error("method {0} has no closed-form G matrix")]
    NotClosedForm(Method),
    #[error("non-finite forecast for series {series} at step {step}")]
    NonFiniteForecast { series: usize, step: usize },
    #[error("forecast panel has no horizon steps")]
    EmptyHorizon,
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
}

/// Reconciliation methods understood by [`crate::pipeline::reconcile_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    BottomUp,
    WlsStructural,
    WlsVariance,
    MintShrink,
    MintSample,
    MintitGlobal,
    MintitLocal,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::BottomUp,
        Method::WlsStructural,
        Method::WlsVariance,
        Method::MintShrink,
        Method::MintSample,
        Method::MintitGlobal,
        Method::MintitLocal,
    ];

    /// The six methods compared in the simulation study.
    pub const STUDY: [Method; 6] = [
        Method::MintShrink,
        Method::WlsStructural,
        Method::WlsVariance,
        Method::BottomUp,
        Method::MintitGlobal,
        Method::MintitLocal,
    ];

    /// Command-line spelling.
    pub fn flag(self) -> &'static str {
        match self {
            Method::BottomUp => "bu",
            Method::WlsStructural => "wls-s",
            Method::WlsVariance => "wls-v",
            Method::MintShrink => "mint",
            Method::MintSample => "mint-sample",
            Method::MintitGlobal => "mintit-g",
            Method::MintitLocal => "mintit-l",
        }
    }

    /// Report spelling.
    pub fn name(self) -> &'static str {
        match self {
            Method::BottomUp => "BU",
            Method::WlsStructural => "WLS_s",
            Method::WlsVariance => "WLS_v",
            Method::MintShrink => "MinT",
            Method::MintSample => "MinT_sample",
            Method::MintitGlobal => "MinTit_g",
            Method::MintitLocal => "MinTit_l",
        }
    }

    pub fn needs_residuals(self) -> bool {
        !matches!(self, Method::BottomUp | Method::WlsStructural)
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Method::MintitGlobal | Method::MintitLocal)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.flag().eq_ignore_ascii_case(s) || m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// `n×m` matrix mapping all-level base forecasts to bottom forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct GMatrix<T: Real> {
    g: DMatrix<T>,
    method: Method,
}

impl<T: Real> GMatrix<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.g
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// `S·G`, the projection applied to every horizon column.
    pub fn projection(&self, s: &StructureMatrix<T>) -> DMatrix<T> {
        s.matrix() * &self.g
    }
}

/// Forecasts for every node (rows, canonical order) and horizon step (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPanel<T: Real> {
    values: DMatrix<T>,
}

impl<T: Real> ForecastPanel<T> {
    pub fn new(values: DMatrix<T>) -> Result<Self, ReconcileError> {
        if values.ncols() == 0 {
            return Err(ReconcileError::EmptyHorizon);
        }
        if let Some((series, step)) = first_non_finite(&values) {
            return Err(ReconcileError::NonFiniteForecast { series, step });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<T> {
        self.values
    }

    pub fn n_series(&self) -> usize {
        self.values.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.values.ncols()
    }

    pub fn series(&self, i: usize) -> Vec<T> {
        self.values.row(i).iter().copied().collect()
    }
}

pub(crate) fn first_non_finite<T: Real>(m: &DMatrix<T>) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite_value() {
                return Some((i, j));
            }
        }
    }
    None
}

/// `G = [0 | I]`: pick the bottom rows.
pub fn g_bottom_up<T: Real>(s: &StructureMatrix<T>) -> GMatrix<T> {
    let mut g = DMatrix::zeros(s.ncols(), s.nrows());
    for (j, &row) in s.bottom_rows().iter().enumerate() {
        g[(j, row)] = T::one();
    }
    GMatrix {
        g,
        method: Method::BottomUp,
    }
}

fn check_weights<T: Real>(m: usize, w: &DMatrix<T>) -> Result<(), ReconcileError> {
    if w.nrows() != m || w.ncols() != m {
        return Err(ReconcileError::DimensionMismatch {
            what: "weight matrix size",
            expected: m,
            actual: w.nrows().max(w.ncols()),
        });
    }
    if let Some(i) = (0..m).find(|&i| !(w[(i, i)] > T::zero())) {
        return Err(ReconcileError::NonPositiveVariance(i));
    }
    let tol = T::lit(1e-12);
    for i in 0..m {
        for j in 0..i {
            let scale = (w[(i, i)] * w[(j, j)]).sqrt();
            if (w[(i, j)] - w[(j, i)]).abs() > tol * scale {
                return Err(ReconcileError::NotSymmetric(i, j));
            }
        }
    }
    Ok(())
}

/// Condition estimate of an SPD matrix from its Cholesky factor's diagonal.
fn cholesky_condition<T: Real>(l: &DMatrix<T>) -> T {
    let d = l.diagonal();
    let (mut lo, mut hi) = (d[0], d[0]);
    for &v in d.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let r = hi / lo;
    r * r
}

/// Trace-minimizing `G = (S'W⁻¹S)⁻¹ S'W⁻¹`, by two Cholesky solves.
pub fn g_min_trace<T: Real>(
    s: &StructureMatrix<T>,
    w: &CovarianceEstimate<T>,
) -> Result<GMatrix<T>, ReconcileError> {
    let g = min_trace_matrix(s.matrix(), w.matrix())?;
    Ok(GMatrix {
        g,
        method: Method::MintShrink,
    })
}

/// [`g_min_trace`] on bare matrices; `s` is `m×n`, `w` is `m×m`.
pub(crate) fn min_trace_matrix<T: Real>(s: &DMatrix<T>, w: &DMatrix<T>) -> Result<DMatrix<T>, ReconcileError> {
    check_weights(s.nrows(), w)?;
    let chol = w.clone().cholesky().ok_or(ReconcileError::IllConditionedWeights {
        condition: f64::INFINITY,
    })?;
    let condition = cholesky_condition(&chol.l());
    if !(condition <= T::max_condition()) {
        return Err(ReconcileError::IllConditionedWeights {
            condition: condition.as_f64(),
        });
    }
    let winv_s = chol.solve(s);
    let normal = s.tr_mul(&winv_s);
    let normal = normal.cholesky().ok_or(ReconcileError::StructuralRank)?;
    Ok(normal.solve(&winv_s.transpose()))
}

/// Weighted least squares with a diagonal weight vector.
///
/// Computed without factorizing `W`: `S'Λ⁻¹S` is accumulated row by row.
pub fn g_wls<T: Real>(s: &StructureMatrix<T>, weights: &[T], method: Method) -> Result<GMatrix<T>, ReconcileError> {
    let (m, n) = (s.nrows(), s.ncols());
    if weights.len() != m {
        return Err(ReconcileError::DimensionMismatch {
            what: "weight vector length",
            expected: m,
            actual: weights.len(),
        });
    }
    if let Some(i) = weights.iter().position(|&v| !(v > T::zero())) {
        return Err(ReconcileError::NonPositiveVariance(i));
    }
    let sm = s.matrix();
    let mut scaled = sm.transpose();
    for (i, &wi) in weights.iter().enumerate() {
        scaled.column_mut(i).unscale_mut(wi);
    }
    let normal = &scaled * sm;
    debug_assert_eq!(normal.shape(), (n, n));
    let normal = normal.cholesky().ok_or(ReconcileError::StructuralRank)?;
    Ok(GMatrix {
        g: normal.solve(&scaled),
        method,
    })
}

/// `S·G·f`, column by column.
pub fn reconcile<T: Real>(
    f: &ForecastPanel<T>,
    g: &GMatrix<T>,
    s: &StructureMatrix<T>,
) -> Result<ForecastPanel<T>, ReconcileError> {
    if f.n_series() != s.nrows() {
        return Err(ReconcileError::DimensionMismatch {
            what: "forecast rows",
            expected: s.nrows(),
            actual: f.n_series(),
        });
    }
    if g.g.shape() != (s.ncols(), s.nrows()) {
        return Err(ReconcileError::DimensionMismatch {
            what: "G matrix columns",
            expected: s.nrows(),
            actual: g.g.ncols(),
        });
    }
    let bottom = &g.g * &f.values;
    ForecastPanel::new(s.matrix() * bottom)
}

/// Builds the `G` matrix for one of the closed-form methods.
pub fn make_reconciler<T: Real>(
    method: Method,
    s: &StructureMatrix<T>,
    residuals: Option<&ResidualPanel<T>>,
) -> Result<GMatrix<T>, ReconcileError> {
    let need = || -> Result<&ResidualPanel<T>, ReconcileError> {
        let r = residuals.ok_or(ReconcileError::MissingResiduals(method))?;
        if r.n_series() != s.nrows() {
            return Err(ReconcileError::DimensionMismatch {
                what: "residual series",
                expected: s.nrows(),
                actual: r.n_series(),
            });
        }
        Ok(r)
    };
    match method {
        Method::BottomUp => Ok(g_bottom_up(s)),
        Method::WlsStructural => g_wls(s, &structural_weights(s).diagonal(), method),
        Method::WlsVariance => {
            let w = variance_weights(need()?)?;
            g_wls(s, &w.diagonal(), method)
        }
        Method::MintShrink | Method::MintSample => {
            let r = need()?;
            let w = if method == Method::MintShrink {
                shrinkage_covariance(r)?
            } else {
                sample_covariance(r)?
            };
            let mut g = g_min_trace(s, &w)?;
            g.method = method;
            Ok(g)
        }
        Method::MintitGlobal | Method::MintitLocal => Err(ReconcileError::NotClosedForm(method)),
    }
}
