//! Estimators for the covariance of base-forecast errors.
//!
//! Residual panels may contain series that start late (missing head
//! values). Every estimator works on complete cases: the rows at which all
//! requested series are observed. Estimating a subset of series therefore
//! never uses fewer rows than estimating the full panel.

use std::ops::Range;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::hierarchy::StructureMatrix;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CovarianceError {
    #[error("need at least {needed} complete rows, found {available}")]
    TooFewRows { needed: usize, available: usize },
    #[error("series {series} has zero variance")]
    ZeroVariance { series: usize },
    #[error("series index {index} out of range for {len} series")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("series index {0} requested twice")]
    DuplicateIndex(usize),
    #[error("residual panel has {values} columns but {offsets} start offsets")]
    OffsetMismatch { values: usize, offsets: usize },
    #[error("series {series} has no observations (start {start}, {rows} rows)")]
    EmptySeries { series: usize, start: usize, rows: usize },
    #[error("non-finite residual in series {series} at row {row}")]
    NonFinite { series: usize, row: usize },
}

/// One-step in-sample residuals, one column per series.
///
/// Series `i` is observed from row `start(i)` to the last row; cells above
/// that are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPanel<T: Real> {
    values: DMatrix<T>,
    start: Vec<usize>,
}

impl<T: Real> ResidualPanel<T> {
    pub fn new(values: DMatrix<T>, start: Vec<usize>) -> Result<Self, CovarianceError> {
        if start.len() != values.ncols() {
            return Err(CovarianceError::OffsetMismatch {
                values: values.ncols(),
                offsets: start.len(),
            });
        }
        for (series, &s) in start.iter().enumerate() {
            if s >= values.nrows() {
                return Err(CovarianceError::EmptySeries {
                    series,
                    start: s,
                    rows: values.nrows(),
                });
            }
            for row in s..values.nrows() {
                if !values[(row, series)].is_finite_value() {
                    return Err(CovarianceError::NonFinite { series, row });
                }
            }
        }
        Ok(Self { values, start })
    }

    /// A panel with every series observed on every row.
    pub fn complete(values: DMatrix<T>) -> Result<Self, CovarianceError> {
        let n = values.ncols();
        Self::new(values, vec![0; n])
    }

    /// Aligns series of differing lengths at their last observation.
    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self, CovarianceError> {
        let rows = columns.iter().map(Vec::len).max().unwrap_or(0);
        let mut values = DMatrix::zeros(rows, columns.len());
        let mut start = Vec::with_capacity(columns.len());
        for (j, col) in columns.iter().enumerate() {
            let s = rows - col.len();
            for (k, &v) in col.iter().enumerate() {
                values[(s + k, j)] = v;
            }
            start.push(s);
        }
        Self::new(values, start)
    }

    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn start(&self, series: usize) -> usize {
        self.start[series]
    }

    pub fn starts(&self) -> &[usize] {
        &self.start
    }

    /// Observed values of one series.
    pub fn observed(&self, series: usize) -> Vec<T> {
        (self.start[series]..self.n_rows()).map(|r| self.values[(r, series)]).collect()
    }

    /// Rows at which every series in `idx` is observed.
    pub fn complete_rows(&self, idx: &[usize]) -> Range<usize> {
        let first = idx.iter().map(|&i| self.start[i]).max().unwrap_or(0);
        first..self.n_rows()
    }

    fn check_index(&self, idx: &[usize]) -> Result<(), CovarianceError> {
        check_index(idx, self.n_series())
    }

    pub fn all_series(&self) -> Vec<usize> {
        (0..self.n_series()).collect()
    }
}

fn check_index(idx: &[usize], len: usize) -> Result<(), CovarianceError> {
    let mut seen = vec![false; len];
    for &i in idx {
        if i >= len {
            return Err(CovarianceError::IndexOutOfRange { index: i, len });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(CovarianceError::DuplicateIndex(i));
        }
    }
    Ok(())
}

/// A covariance matrix and the shrinkage intensity that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate<T: Real> {
    w: DMatrix<T>,
    lambda: T,
    n_obs_used: usize,
}

impl<T: Real> CovarianceEstimate<T> {
    pub fn new(w: DMatrix<T>, lambda: T, n_obs_used: usize) -> Self {
        Self { w, lambda, n_obs_used }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let w = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag));
        Self::new(w, T::zero(), 0)
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.w
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn n_obs_used(&self) -> usize {
        self.n_obs_used
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn diagonal(&self) -> Vec<T> {
        self.w.diagonal().iter().copied().collect()
    }

    pub fn is_diagonal(&self) -> bool {
        let m = self.dim();
        (0..m).all(|i| (0..m).all(|j| i == j || self.w[(i, j)] == T::zero()))
    }

    /// `Some(i)` for the first diagonal entry that is not strictly positive.
    pub fn first_nonpositive_variance(&self) -> Option<usize> {
        (0..self.dim()).find(|&i| !(self.w[(i, i)] > T::zero()))
    }
}

/// Centered observations of `idx` over their complete rows (rows × |idx|).
fn centered_block<T: Real>(
    r: &ResidualPanel<T>,
    idx: &[usize],
) -> Result<DMatrix<T>, CovarianceError> {
    r.check_index(idx)?;
    let rows = r.complete_rows(idx);
    let n = rows.len();
    if n < 2 {
        return Err(CovarianceError::TooFewRows {
            needed: 2,
            available: n,
        });
    }
    let mut x = DMatrix::zeros(n, idx.len());
    for (j, &s) in idx.iter().enumerate() {
        let col: Vec<T> = rows.clone().map(|row| r.values[(row, s)]).collect();
        let mean = col.iter().fold(T::zero(), |a, &b| a + b) / T::count(n);
        for (k, v) in col.into_iter().enumerate() {
            x[(k, j)] = v - mean;
        }
    }
    Ok(x)
}

/// Maximum-likelihood (divide by n) covariance of `x`, which must be centered.
fn ml_covariance<T: Real>(x: &DMatrix<T>) -> DMatrix<T> {
    let n = T::count(x.nrows());
    let mut w = x.tr_mul(x) / n;
    // Exact symmetry regardless of summation order.
    for i in 0..w.nrows() {
        for j in 0..i {
            w[(i, j)] = w[(j, i)];
        }
    }
    w
}

pub fn sample_covariance<T: Real>(r: &ResidualPanel<T>) -> Result<CovarianceEstimate<T>, CovarianceError> {
    sample_covariance_of(r, &r.all_series())
}

/// Sample covariance of the series in `idx`, over their complete rows.
pub fn sample_covariance_of<T: Real>(
    r: &ResidualPanel<T>,
    idx: &[usize],
) -> Result<CovarianceEstimate<T>, CovarianceError> {
    let x = centered_block(r, idx)?;
    Ok(CovarianceEstimate::new(ml_covariance(&x), T::zero(), x.nrows()))
}

pub fn shrinkage_covariance<T: Real>(r: &ResidualPanel<T>) -> Result<CovarianceEstimate<T>, CovarianceError> {
    shrinkage_covariance_of(r, &r.all_series())
}

/// Sample covariance with its correlations shrunk toward zero.
///
/// The intensity is the Schäfer–Strimmer estimate for a diagonal target,
///
/// ```text
/// λ = Σ_{i≠j} Var(r_ij) / Σ_{i≠j} r_ij²,   clamped to [0, 1]
/// Var(r_ij) = n/(n-1)³ · Σ_k (w_kij - w̄_ij)²,   w_kij = x_ki x_kj
/// ```
///
/// where `x` are the standardized residuals (unbiased standard deviation)
/// and `r_ij` the sample correlations. Off-diagonal entries are scaled by
/// `1 - λ`; the diagonal is the sample variance.
pub fn shrinkage_covariance_of<T: Real>(
    r: &ResidualPanel<T>,
    idx: &[usize],
) -> Result<CovarianceEstimate<T>, CovarianceError> {
    let x = centered_block(r, idx)?;
    let (n, m) = x.shape();
    let mut w = ml_covariance(&x);
    if let Some(series) = (0..m).find(|&i| !(w[(i, i)] > T::zero())) {
        return Err(CovarianceError::ZeroVariance { series: idx[series] });
    }
    if m == 1 {
        return Ok(CovarianceEstimate::new(w, T::zero(), n));
    }

    let nf = T::count(n);
    let nm1 = nf - T::one();
    let mut z = x.clone();
    for j in 0..m {
        let sd = (w[(j, j)] * nf / nm1).sqrt();
        z.column_mut(j).unscale_mut(sd);
    }

    let mut var_sum = T::zero();
    let mut corr_sq_sum = T::zero();
    for i in 0..m {
        for j in (i + 1)..m {
            let mut mean = T::zero();
            for k in 0..n {
                mean += z[(k, i)] * z[(k, j)];
            }
            mean /= nf;
            let mut ss = T::zero();
            for k in 0..n {
                let d = z[(k, i)] * z[(k, j)] - mean;
                ss += d * d;
            }
            let corr = nf / nm1 * mean;
            var_sum += ss * nf / (nm1 * nm1 * nm1);
            corr_sq_sum += corr * corr;
        }
    }
    let lambda = if corr_sq_sum > T::zero() {
        (var_sum / corr_sq_sum).max(T::zero()).min(T::one())
    } else {
        T::one()
    };

    let keep = T::one() - lambda;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                w[(i, j)] *= keep;
            }
        }
    }
    Ok(CovarianceEstimate::new(w, lambda, n))
}

/// `diag(S·1)`: each series weighted by the number of bottom series it sums.
pub fn structural_weights<T: Real>(s: &StructureMatrix<T>) -> CovarianceEstimate<T> {
    CovarianceEstimate::from_diagonal(&s.row_sums())
}

/// Diagonal of the sample covariance.
pub fn variance_weights<T: Real>(r: &ResidualPanel<T>) -> Result<CovarianceEstimate<T>, CovarianceError> {
    let sample = sample_covariance(r)?;
    let n = sample.n_obs_used();
    let mut est = CovarianceEstimate::from_diagonal(&sample.diagonal());
    est.n_obs_used = n;
    Ok(est)
}

/// Principal submatrix on `idx`; the shrinkage intensity is carried over.
pub fn subset<T: Real>(
    cov: &CovarianceEstimate<T>,
    idx: &[usize],
) -> Result<CovarianceEstimate<T>, CovarianceError> {
    check_index(idx, cov.dim())?;
    let w = DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov.w[(idx[i], idx[j])]);
    Ok(CovarianceEstimate::new(w, cov.lambda, cov.n_obs_used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_structure_matrix, Hierarchy};
    use crate::testutil::lcg;

    fn panel(rows: usize, cols: usize, data: &[f64]) -> ResidualPanel<f64> {
        ResidualPanel::complete(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn two_point_sample() {
        let est = sample_covariance(&panel(2, 2, &[1., -1., -1., 1.])).unwrap();
        assert_eq!(est.matrix(), &DMatrix::from_row_slice(2, 2, &[1., -1., -1., 1.]));
        assert_eq!(est.lambda(), 0.0);
        assert_eq!(est.n_obs_used(), 2);
    }

    #[test]
    fn constant_series_gives_zero_variance() {
        let est = sample_covariance(&panel(3, 1, &[0., 0., 0.])).unwrap();
        assert_eq!(est.matrix()[(0, 0)], 0.0);
        assert_eq!(est.first_nonpositive_variance(), Some(0));
        assert_eq!(
            shrinkage_covariance(&panel(3, 1, &[0., 0., 0.])).unwrap_err(),
            CovarianceError::ZeroVariance { series: 0 }
        );
    }

    #[test]
    fn sample_matches_double_loop() {
        let data = lcg(7, 15);
        let r = panel(5, 3, &data);
        let est = sample_covariance(&r).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let xi: Vec<f64> = (0..5).map(|k| data[k * 3 + i]).collect();
                let xj: Vec<f64> = (0..5).map(|k| data[k * 3 + j]).collect();
                let mi = xi.iter().sum::<f64>() / 5.0;
                let mj = xj.iter().sum::<f64>() / 5.0;
                let c: f64 = (0..5).map(|k| (xi[k] - mi) * (xj[k] - mj)).sum::<f64>() / 5.0;
                assert!((est.matrix()[(i, j)] - c).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn too_few_rows() {
        let r = panel(1, 2, &[1., 2.]);
        assert_eq!(
            sample_covariance(&r).unwrap_err(),
            CovarianceError::TooFewRows { needed: 2, available: 1 }
        );
    }

    /// Direct transcription of the Schäfer–Strimmer intensity for a diagonal
    /// target, written against raw columns.
    fn lambda_oracle(cols: &[Vec<f64>]) -> f64 {
        let n = cols[0].len() as f64;
        let std: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| {
                let m = c.iter().sum::<f64>() / n;
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                c.iter().map(|v| (v - m) / sd).collect()
            })
            .collect();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..cols.len() {
            for j in 0..cols.len() {
                if i == j {
                    continue;
                }
                let w: Vec<f64> = (0..cols[0].len()).map(|k| std[i][k] * std[j][k]).collect();
                let wbar = w.iter().sum::<f64>() / n;
                let var = n / (n - 1.0).powi(3) * w.iter().map(|v| (v - wbar).powi(2)).sum::<f64>();
                let r = n / (n - 1.0) * wbar;
                num += var;
                den += r * r;
            }
        }
        (num / den).clamp(0.0, 1.0)
    }

    #[test]
    fn shrinkage_perfect_correlation_keeps_off_diagonal() {
        let a = lcg(11, 200);
        let cols = vec![a.clone(), a.clone()];
        let r = ResidualPanel::from_columns(&cols).unwrap();
        let est = shrinkage_covariance(&r).unwrap();
        let oracle = lambda_oracle(&cols);
        assert!((est.lambda() - oracle).abs() < 1e-12);
        assert!(est.lambda() < 0.02, "lambda {}", est.lambda());
        let sample = sample_covariance(&r).unwrap();
        assert!(est.matrix()[(0, 1)] > 0.98 * sample.matrix()[(0, 1)]);
    }

    #[test]
    fn shrinkage_matches_oracle_on_mixed_panel() {
        let base = lcg(3, 40);
        let noise = lcg(5, 40);
        let cols = vec![
            base.clone(),
            base.iter().zip(&noise).map(|(b, e)| b + 0.5 * e).collect(),
            noise.iter().map(|e| -e).collect(),
            lcg(9, 40),
        ];
        let r = ResidualPanel::from_columns(&cols).unwrap();
        let est = shrinkage_covariance(&r).unwrap();
        assert!((est.lambda() - lambda_oracle(&cols)).abs() < 1e-12);
        let sample = sample_covariance(&r).unwrap();
        for i in 0..4 {
            assert_eq!(est.matrix()[(i, i)], sample.matrix()[(i, i)]);
            for j in 0..4 {
                if i != j {
                    let expect = (1.0 - est.lambda()) * sample.matrix()[(i, j)];
                    assert!((est.matrix()[(i, j)] - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn single_series_has_zero_intensity() {
        let r = panel(4, 1, &[1., 2., 4., 8.]);
        let est = shrinkage_covariance(&r).unwrap();
        assert_eq!(est.lambda(), 0.0);
        assert_eq!(est.matrix(), sample_covariance(&r).unwrap().matrix());
    }

    #[test]
    fn structural_weights_are_row_sums() {
        let h = Hierarchy::balanced(&[2, 2, 2]).unwrap().without(&["BBA", "BBB"]).unwrap();
        let s = build_structure_matrix::<f64>(&h);
        let w = structural_weights(&s);
        let bb = h.index_of("BB").unwrap();
        assert_eq!(w.matrix()[(bb, bb)], 1.0);
        assert_eq!(w.matrix()[(0, 0)], 7.0);
        for i in 0..h.len() {
            assert_eq!(w.matrix()[(i, i)], h.leaves_under(i).len() as f64);
        }
        assert!(w.is_diagonal());
    }

    #[test]
    fn variance_weights_match_per_series_variance() {
        let data = lcg(21, 24);
        let r = panel(6, 4, &data);
        let est = variance_weights(&r).unwrap();
        assert!(est.is_diagonal());
        for j in 0..4 {
            let col: Vec<f64> = (0..6).map(|k| data[k * 4 + j]).collect();
            let m = col.iter().sum::<f64>() / 6.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 6.0;
            assert!((est.matrix()[(j, j)] - v).abs() < 1e-14);
        }
    }

    #[test]
    fn subset_picks_principal_submatrix() {
        let id = CovarianceEstimate::<f64>::new(DMatrix::identity(4, 4), 0.3, 10);
        let sub = subset(&id, &[1, 3]).unwrap();
        assert_eq!(sub.matrix(), &DMatrix::identity(2, 2));
        assert_eq!(sub.lambda(), 0.3);
        assert_eq!(subset(&id, &[0, 1, 2, 3]).unwrap(), id);

        let a = DMatrix::from_row_slice(5, 5, &lcg(2, 25));
        let spd = &a * a.transpose() + DMatrix::identity(5, 5);
        let est = CovarianceEstimate::new(spd.clone(), 0.0, 0);
        let sub = subset(&est, &[0, 3]).unwrap();
        assert_eq!(sub.matrix()[(0, 1)], spd[(0, 3)]);
        assert_eq!(sub.matrix()[(1, 1)], spd[(3, 3)]);
        assert_eq!(subset(&est, &[1, 1]).unwrap_err(), CovarianceError::DuplicateIndex(1));
        assert!(matches!(
            subset(&est, &[5]).unwrap_err(),
            CovarianceError::IndexOutOfRange { index: 5, len: 5 }
        ));
    }

    #[test]
    fn complete_case_rows_depend_on_subset() {
        let cols = vec![lcg(1, 10), lcg(2, 6), lcg(3, 3)];
        let r = ResidualPanel::from_columns(&cols).unwrap();
        assert_eq!(r.complete_rows(&[0, 1, 2]), 7..10);
        assert_eq!(r.complete_rows(&[0, 1]), 4..10);
        assert_eq!(sample_covariance_of(&r, &[0, 1]).unwrap().n_obs_used(), 6);
        assert_eq!(sample_covariance(&r).unwrap().n_obs_used(), 3);
    }
}
