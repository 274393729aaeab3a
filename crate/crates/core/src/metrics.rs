//! Forecast accuracy and the per-level relative-change report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::Hierarchy;
use crate::mintit::MinTitDiagnostics;
use crate::reconcilers::Method;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("cannot compute a relative change against a zero baseline")]
    ZeroBaseline,
    #[error("length mismatch: {0} forecasts vs {1} actuals")]
    LengthMismatch(usize, usize),
    #[error("empty evaluation window")]
    EmptyWindow,
    #[error("windows must be increasing and start at 1, got {0:?}")]
    BadWindows(Vec<usize>),
    #[error("no replicates to summarize")]
    NoReplicates,
    #[error("replicate {rep} does not match the report layout")]
    Layout { rep: usize },
}

pub fn rmse<T: Real>(forecast: &[T], actual: &[T]) -> Result<T, MetricsError> {
    if forecast.len() != actual.len() {
        return Err(MetricsError::LengthMismatch(forecast.len(), actual.len()));
    }
    if forecast.is_empty() {
        return Err(MetricsError::EmptyWindow);
    }
    let mut acc = T::zero();
    for (&f, &a) in forecast.iter().zip(actual) {
        acc += (f - a) * (f - a);
    }
    Ok((acc / T::count(forecast.len())).sqrt())
}

/// `100·(candidate − base)/base`.
pub fn relative_change<T: Real>(candidate: T, base: T) -> Result<T, MetricsError> {
    if base == T::zero() {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok(T::lit(100.0) * (candidate - base) / base)
}

/// Horizon windows `1..=k` for each `k`, e.g. `[1, 2, 4]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalWindowSpec {
    ends: Vec<usize>,
}

impl EvalWindowSpec {
    pub fn nested(ends: &[usize]) -> Result<Self, MetricsError> {
        if ends.is_empty() || ends[0] != 1 || ends.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MetricsError::BadWindows(ends.to_vec()));
        }
        Ok(Self { ends: ends.to_vec() })
    }

    pub fn ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn horizon(&self) -> usize {
        *self.ends.last().expect("non-empty")
    }

    pub fn labels(&self) -> Vec<String> {
        self.ends
            .iter()
            .map(|&k| if k == 1 { "h=1".to_string() } else { format!("1:{k}") })
            .collect()
    }
}

/// Node RMSEs for every window: `[node][window]`.
pub fn node_window_rmse(forecasts: &nalgebra::DMatrix<f64>, actuals: &nalgebra::DMatrix<f64>, windows: &EvalWindowSpec) -> Result<Vec<Vec<f64>>, MetricsError> {
    if forecasts.shape() != actuals.shape() {
        return Err(MetricsError::LengthMismatch(forecasts.len(), actuals.len()));
    }
    (0..forecasts.nrows())
        .map(|i| {
            windows
                .ends()
                .iter()
                .map(|&k| {
                    if k > forecasts.ncols() {
                        return Err(MetricsError::EmptyWindow);
                    }
                    let f: Vec<f64> = (0..k).map(|j| forecasts[(i, j)]).collect();
                    let a: Vec<f64> = (0..k).map(|j| actuals[(i, j)]).collect();
                    rmse(&f, &a)
                })
                .collect()
        })
        .collect()
}

/// One replicate: node × window RMSEs of the base forecasts and of every
/// reconciled set, plus iterative diagnostics where applicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    pub base: Vec<Vec<f64>>,
    pub methods: Vec<MethodRmse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRmse {
    pub method: Method,
    pub rmse: Vec<Vec<f64>>,
    pub mintit: Option<MinTitDiagnostics>,
}

/// Depth-based level groups, named `Top`, `Level k`, ..., `Bottom`.
pub fn level_groups(h: &Hierarchy) -> Vec<(String, Vec<usize>)> {
    let levels = h.levels();
    let last = levels.len() - 1;
    levels
        .into_iter()
        .enumerate()
        .map(|(d, nodes)| {
            let name = if d == 0 {
                "Top".to_string()
            } else if d == last {
                "Bottom".to_string()
            } else {
                format!("Level {d}")
            };
            (name, nodes)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub method: Method,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub not_converged: usize,
}

/// Mean percentage change in RMSE relative to the base forecasts.
///
/// `changes[level][method][window]`; the last level row is `Average`,
/// the mean of the level rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub levels: Vec<String>,
    pub windows: Vec<String>,
    pub methods: Vec<Method>,
    pub changes: Vec<Vec<Vec<f64>>>,
    pub reps: usize,
    pub aggregation: Aggregation,
    pub iterations: Vec<IterationSummary>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn level_rmse(node: &[Vec<f64>], nodes: &[usize], w: usize) -> f64 {
    mean(nodes.iter().map(|&i| node[i][w]))
}

/// How level RMSEs are combined across replicates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Relative change per replicate, then the mean of those changes.
    #[default]
    PerRep,
    /// Relative change of the mean level RMSE across replicates.
    Pooled,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-rep" => Ok(Aggregation::PerRep),
            "pooled" => Ok(Aggregation::Pooled),
            _ => Err(format!("unknown aggregation `{s}` (expected per-rep or pooled)")),
        }
    }
}

/// [`build_report_with`] using [`Aggregation::PerRep`].
pub fn build_report(h: &Hierarchy, windows: &EvalWindowSpec, reps: &[RepResult]) -> Result<RunReport, MetricsError> {
    build_report_with(h, windows, reps, Aggregation::PerRep)
}

/// Reduces replicates in order, so the result does not depend on how they
/// were computed.
pub fn build_report_with(
    h: &Hierarchy,
    windows: &EvalWindowSpec,
    reps: &[RepResult],
    aggregation: Aggregation,
) -> Result<RunReport, MetricsError> {
    let first = reps.first().ok_or(MetricsError::NoReplicates)?;
    let methods: Vec<Method> = first.methods.iter().map(|m| m.method).collect();
    let groups = level_groups(h);
    let nw = windows.ends().len();

    let mut sums = vec![vec![vec![0.0; nw]; methods.len()]; groups.len()];
    let mut pooled = vec![vec![vec![0.0; nw]; methods.len()]; groups.len()];
    let mut pooled_base = vec![vec![0.0; nw]; groups.len()];
    for r in reps {
        let layout_ok = r.base.len() == h.len()
            && r.methods.len() == methods.len()
            && r.methods.iter().zip(&methods).all(|(m, &want)| m.method == want && m.rmse.len() == h.len());
        if !layout_ok {
            return Err(MetricsError::Layout { rep: r.rep });
        }
        for (g, (_, nodes)) in groups.iter().enumerate() {
            for w in 0..nw {
                let base = level_rmse(&r.base, nodes, w);
                pooled_base[g][w] += base;
                for (k, m) in r.methods.iter().enumerate() {
                    let level = level_rmse(&m.rmse, nodes, w);
                    match aggregation {
                        Aggregation::PerRep => sums[g][k][w] += relative_change(level, base)?,
                        Aggregation::Pooled => pooled[g][k][w] += level,
                    }
                }
            }
        }
    }

    let n = reps.len() as f64;
    let mut changes: Vec<Vec<Vec<f64>>> = match aggregation {
        Aggregation::PerRep => sums
            .into_iter()
            .map(|g| g.into_iter().map(|m| m.into_iter().map(|s| s / n).collect()).collect())
            .collect(),
        Aggregation::Pooled => pooled
            .iter()
            .zip(&pooled_base)
            .map(|(g, base)| {
                g.iter()
                    .map(|m| m.iter().zip(base).map(|(&v, &b)| relative_change(v, b)).collect())
                    .collect::<Result<_, _>>()
            })
            .collect::<Result<_, _>>()?,
    };
    let average: Vec<Vec<f64>> = (0..methods.len())
        .map(|k| (0..nw).map(|w| mean(changes.iter().map(|g| g[k][w]))).collect())
        .collect();
    changes.push(average);

    let mut levels: Vec<String> = groups.into_iter().map(|(name, _)| name).collect();
    levels.push("Average".to_string());

    let iterations = methods
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_iterative())
        .map(|(k, &method)| {
            let diags: Vec<&MinTitDiagnostics> = reps.iter().filter_map(|r| r.methods[k].mintit.as_ref()).collect();
            IterationSummary {
                method,
                mean_iterations: mean(diags.iter().map(|d| d.iterations as f64)),
                max_iterations: diags.iter().map(|d| d.iterations).max().unwrap_or(0),
                not_converged: diags.iter().filter(|d| !d.converged).count(),
            }
        })
        .collect();

    Ok(RunReport {
        levels,
        windows: windows.labels(),
        methods,
        changes,
        reps: reps.len(),
        aggregation,
        iterations,
    })
}

impl RunReport {
    /// Change for `level` (by name), `method` and window index.
    pub fn change(&self, level: &str, method: Method, window: usize) -> Option<f64> {
        let g = self.levels.iter().position(|l| l == level)?;
        let k = self.methods.iter().position(|&m| m == method)?;
        self.changes.get(g)?.get(k)?.get(window).copied()
    }

    /// Mean over the windows.
    pub fn window_average(&self, level: &str, method: Method) -> Option<f64> {
        let g = self.levels.iter().position(|l| l == level)?;
        let k = self.methods.iter().position(|&m| m == method)?;
        Some(mean(self.changes[g][k].iter().copied()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,method");
        for w in &self.windows {
            out.push(',');
            out.push_str(w);
        }
        out.push_str(",average\n");
        for (g, level) in self.levels.iter().enumerate() {
            for (k, m) in self.methods.iter().enumerate() {
                let row = &self.changes[g][k];
                let _ = write!(out, "{level},{}", m.name());
                for v in row {
                    let _ = write!(out, ",{v:.4}");
                }
                let _ = writeln!(out, ",{:.4}", mean(row.iter().copied()));
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let agg = match self.aggregation {
            Aggregation::PerRep => "mean of per-replicate changes",
            Aggregation::Pooled => "change of mean RMSE",
        };
        let _ = writeln!(out, "Percentage change in RMSE vs base forecasts ({} replicates, {agg})", self.reps);
        let _ = write!(out, "{:<10}{:<12}", "level", "method");
        for w in self.windows.iter().chain(std::iter::once(&"average".to_string())) {
            let _ = write!(out, "{w:>10}");
        }
        out.push('\n');
        for (g, level) in self.levels.iter().enumerate() {
            for (k, m) in self.methods.iter().enumerate() {
                let row = &self.changes[g][k];
                let _ = write!(out, "{:<10}{:<12}", level, m.name());
                for v in row.iter().copied().chain(std::iter::once(mean(row.iter().copied()))) {
                    let _ = write!(out, "{v:>10.2}");
                }
                out.push('\n');
            }
        }
        for it in &self.iterations {
            let _ = writeln!(
                out,
                "{}: mean iterations {:.2}, max {}, not converged {}",
                it.method.name(),
                it.mean_iterations,
                it.max_iterations,
                it.not_converged
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::two_level;

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 0.0], &[0.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse::<f64>(&[], &[]), Err(MetricsError::EmptyWindow));
        assert_eq!(rmse(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch(1, 2)));
    }

    #[test]
    fn relative_change_values() {
        assert_eq!(relative_change(9.0, 10.0).unwrap(), -10.0);
        assert_eq!(relative_change(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(relative_change(1.0, 0.0), Err(MetricsError::ZeroBaseline));
    }

    #[test]
    fn windows() {
        let w = EvalWindowSpec::nested(&[1, 2, 4]).unwrap();
        assert_eq!(w.labels(), ["h=1", "1:2", "1:4"]);
        assert_eq!(w.horizon(), 4);
        assert!(EvalWindowSpec::nested(&[2, 4]).is_err());
        assert!(EvalWindowSpec::nested(&[1, 4, 4]).is_err());
    }

    #[test]
    fn level_names() {
        let names: Vec<String> = level_groups(&two_level()).into_iter().map(|g| g.0).collect();
        assert_eq!(names, ["Top", "Level 1", "Bottom"]);
    }

    fn rep(rep: usize, base: f64, scale: f64) -> RepResult {
        let h = two_level();
        RepResult {
            rep,
            base: (0..h.len()).map(|i| vec![base + i as f64, base]).collect(),
            methods: vec![MethodRmse {
                method: Method::BottomUp,
                rmse: (0..h.len()).map(|i| vec![(base + i as f64) * scale, base]).collect(),
                mintit: None,
            }],
        }
    }

    #[test]
    fn report_averages_changes_over_reps() {
        let h = two_level();
        let w = EvalWindowSpec::nested(&[1, 2]).unwrap();
        let report = build_report(&h, &w, &[rep(0, 1.0, 0.9), rep(1, 2.0, 1.1)]).unwrap();
        assert_eq!(report.levels, ["Top", "Level 1", "Bottom", "Average"]);
        let top = report.change("Top", Method::BottomUp, 0).unwrap();
        assert!(top.abs() < 1e-12, "mean of -10 and +10, got {top}");
        assert_eq!(report.change("Bottom", Method::BottomUp, 1), Some(0.0));
        let avg: f64 = ["Top", "Level 1", "Bottom"]
            .iter()
            .map(|l| report.change(l, Method::BottomUp, 0).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((report.change("Average", Method::BottomUp, 0).unwrap() - avg).abs() < 1e-12);
        assert!(report.to_csv().starts_with("level,method,h=1,1:2,average\nTop,BU,"));
        assert!(report.to_table().contains("Bottom"));
    }

    #[test]
    fn pooled_aggregation_uses_mean_rmse() {
        let h = two_level();
        let w = EvalWindowSpec::nested(&[1, 2]).unwrap();
        let reps = [rep(0, 1.0, 0.9), rep(1, 2.0, 1.1)];
        let report = build_report_with(&h, &w, &reps, Aggregation::Pooled).unwrap();
        // Top node base RMSEs 1 and 2, method 0.9 and 2.2: (3.1 - 3) / 3.
        let top = report.change("Top", Method::BottomUp, 0).unwrap();
        assert!((top - 100.0 / 30.0).abs() < 1e-10, "{top}");
        assert_eq!(report.aggregation, Aggregation::Pooled);
        assert_eq!(report.change("Bottom", Method::BottomUp, 1), Some(0.0));
    }

    #[test]
    fn report_rejects_layout_mismatch() {
        let h = two_level();
        let w = EvalWindowSpec::nested(&[1, 2]).unwrap();
        let mut bad = rep(1, 1.0, 1.0);
        bad.base.pop();
        assert_eq!(build_report(&h, &w, &[rep(0, 1.0, 1.0), bad]), Err(MetricsError::Layout { rep: 1 }));
        assert_eq!(build_report(&h, &w, &[]), Err(MetricsError::NoReplicates));
    }
}
