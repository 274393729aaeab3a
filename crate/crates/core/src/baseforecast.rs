//! Simple univariate base forecasters and their one-step in-sample residuals.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForecastError {
    #[error("series of length {len} is too short for {kind} (need {needed})")]
    TooShort {
        kind: ForecasterKind,
        len: usize,
        needed: usize,
    },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("series contains a non-finite value at {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ForecasterKind {
    /// Repeat the last value.
    Naive,
    /// Repeat the sample mean.
    Mean,
    /// Autoregression with intercept, order chosen by AIC up to `max_order`.
    ArOls { max_order: usize },
    /// Simple exponential smoothing, α from a grid by in-sample SSE.
    Ses,
}

impl ForecasterKind {
    pub const DEFAULT_AR: ForecasterKind = ForecasterKind::ArOls { max_order: 2 };

    pub fn min_length(self) -> usize {
        match self {
            ForecasterKind::ArOls { max_order } => (max_order + 2).max(4),
            _ => 4,
        }
    }
}

impl fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForecasterKind::Naive => f.write_str("naive"),
            ForecasterKind::Mean => f.write_str("mean"),
            ForecasterKind::ArOls { max_order } => write!(f, "ar({max_order})"),
            ForecasterKind::Ses => f.write_str("ses"),
        }
    }
}

impl FromStr for ForecasterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(ForecasterKind::Naive),
            "mean" => Ok(ForecasterKind::Mean),
            "ar" => Ok(ForecasterKind::DEFAULT_AR),
            "ses" => Ok(ForecasterKind::Ses),
            other => {
                let order = other
                    .strip_prefix("ar")
                    .and_then(|p| p.parse::<usize>().ok())
                    .ok_or_else(|| format!("unknown base forecaster `{s}`"))?;
                Ok(ForecasterKind::ArOls { max_order: order })
            }
        }
    }
}

/// Forecasts and in-sample residuals from one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseFit<T: Real> {
    pub forecasts: Vec<T>,
    /// Residuals for observations `warmup..len`.
    pub residuals: Vec<T>,
    pub warmup: usize,
    /// Model actually used (AR falls back to `Mean` on constant input).
    pub model: FittedModel<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel<T: Real> {
    Naive,
    Mean { mean: T },
    Ar { intercept: T, coefficients: Vec<T> },
    Ses { alpha: T, level: T },
}

/// The α grid searched by SES: 0.05, 0.10, ..., 0.95.
pub fn ses_alpha_grid<T: Real>() -> Vec<T> {
    (1..=19).map(|k| T::lit(k as f64 * 0.05)).collect()
}

pub fn fit_forecast<T: Real>(series: &[T], horizon: usize, kind: ForecasterKind) -> Result<BaseFit<T>, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    if series.len() < kind.min_length() {
        return Err(ForecastError::TooShort {
            kind,
            len: series.len(),
            needed: kind.min_length(),
        });
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite_value()) {
        return Err(ForecastError::NonFinite(i));
    }
    Ok(match kind {
        ForecasterKind::Naive => naive(series, horizon),
        ForecasterKind::Mean => mean_model(series, horizon),
        ForecasterKind::ArOls { max_order } => ar_ols(series, horizon, max_order),
        ForecasterKind::Ses => ses(series, horizon),
    })
}

fn naive<T: Real>(x: &[T], horizon: usize) -> BaseFit<T> {
    BaseFit {
        forecasts: vec![x[x.len() - 1]; horizon],
        residuals: x.windows(2).map(|w| w[1] - w[0]).collect(),
        warmup: 1,
        model: FittedModel::Naive,
    }
}

fn mean_of<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |a, &b| a + b) / T::count(x.len())
}

fn mean_model<T: Real>(x: &[T], horizon: usize) -> BaseFit<T> {
    let mean = mean_of(x);
    BaseFit {
        forecasts: vec![mean; horizon],
        residuals: x.iter().map(|&v| v - mean).collect(),
        warmup: 0,
        model: FittedModel::Mean { mean },
    }
}

/// Least-squares AR(p) with intercept on targets `x[start..]`.
/// Returns (intercept, coefficients, residuals).
fn ar_fit<T: Real>(x: &[T], p: usize, start: usize) -> Option<(T, Vec<T>, Vec<T>)> {
    let rows = x.len() - start;
    let design = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { T::one() } else { x[start + r - c] });
    let target = DVector::from_fn(rows, |r, _| x[start + r]);
    let beta = design.clone().svd(true, true).solve(&target, T::default_epsilon()).ok()?;
    if beta.iter().any(|b| !b.is_finite_value()) {
        return None;
    }
    let resid = target - design * &beta;
    Some((beta[0], beta.iter().skip(1).copied().collect(), resid.iter().copied().collect()))
}

fn ar_ols<T: Real>(x: &[T], horizon: usize, max_order: usize) -> BaseFit<T> {
    if x.iter().all(|&v| v == x[0]) {
        return mean_model(x, horizon);
    }

    // Order selection on a common sample so the AIC values are comparable.
    let n = x.len() - max_order;
    let nf = T::count(n);
    let mut best: Option<(T, usize)> = None;
    for p in 0..=max_order {
        let Some((_, _, resid)) = ar_fit(x, p, max_order) else { continue };
        let sse = resid.iter().fold(T::zero(), |a, &e| a + e * e);
        if !(sse > T::zero()) {
            // Exact fit; the log-likelihood term is unbounded.
            best = Some((T::zero(), p));
            break;
        }
        let aic = nf * (sse / nf).ln() + T::lit(2.0) * T::count(p + 1);
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, p));
        }
    }
    let Some((_, order)) = best else { return mean_model(x, horizon) };
    let Some((intercept, coefficients, residuals)) = ar_fit(x, order, order) else {
        return mean_model(x, horizon);
    };

    let mut history: Vec<T> = x.to_vec();
    let mut forecasts = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let t = history.len();
        let mut next = intercept;
        for (k, &phi) in coefficients.iter().enumerate() {
            next += phi * history[t - 1 - k];
        }
        history.push(next);
        forecasts.push(next);
    }
    BaseFit {
        forecasts,
        residuals,
        warmup: order,
        model: FittedModel::Ar { intercept, coefficients },
    }
}

/// One-step errors and final level of SES with level initialized to `x[0]`.
fn ses_pass<T: Real>(x: &[T], alpha: T) -> (Vec<T>, T) {
    let mut level = x[0];
    let mut errors = Vec::with_capacity(x.len() - 1);
    for &v in &x[1..] {
        let e = v - level;
        errors.push(e);
        level += alpha * e;
    }
    (errors, level)
}

fn ses<T: Real>(x: &[T], horizon: usize) -> BaseFit<T> {
    let mut best: Option<(T, T, Vec<T>, T)> = None;
    for alpha in ses_alpha_grid::<T>() {
        let (errors, level) = ses_pass(x, alpha);
        let sse = errors.iter().fold(T::zero(), |a, &e| a + e * e);
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, alpha, errors, level));
        }
    }
    let (_, alpha, residuals, level) = best.expect("grid is non-empty");
    BaseFit {
        forecasts: vec![level; horizon],
        residuals,
        warmup: 1,
        model: FittedModel::Ses { alpha, level },
    }
}
