//! Iterative trace minimization over one-level sub-hierarchies.
//!
//! Each sweep visits every internal node top-down and replaces the forecasts
//! of the node and its children with their MinT reconciliation under a small
//! `(1+w)×(1+w)` covariance. Updates are applied in place, so later steps of a
//! sweep see earlier ones. Sweeps repeat until the forecast array moves less
//! than `epsilon` (L2 norm over all nodes and horizons), after which the
//! bottom forecasts are summed upward for exact coherence.
//!
//! Residuals never change between sweeps, so every sub-problem's projection
//! is computed once up front ([`SweepPlan`]).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{shrinkage_covariance, shrinkage_covariance_of, subset, CovarianceError, CovarianceEstimate, ResidualPanel};
use crate::hierarchy::{enumerate_subhierarchies, Hierarchy, SubHierarchy};
use crate::reconcilers::{first_non_finite, min_trace_matrix, ForecastPanel, ReconcileError};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MinTitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("global covariance must be supplied in global mode and only there")]
    GlobalCovarianceMode,
    #[error("sub-hierarchy under `{parent}`: {source}")]
    SubProblem {
        parent: String,
        #[source]
        source: ReconcileError,
    },
    #[error("sub-hierarchy under `{parent}`: {source}")]
    SubCovariance {
        parent: String,
        #[source]
        source: CovarianceError,
    },
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error("non-finite forecast after sweep {iteration}")]
    Divergence { iteration: usize },
}

/// Where each sub-problem's covariance comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// Principal submatrix of one shrinkage estimate over the whole panel.
    Global,
    /// Shrinkage estimate over the sub-panel, using every row complete for it.
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinTitConfig<T: Real> {
    pub mode: CovarianceMode,
    /// Convergence threshold; `None` picks [`MinTitConfig::default_epsilon`].
    pub epsilon: Option<T>,
    pub max_iterations: usize,
}

impl<T: Real> Default for MinTitConfig<T> {
    fn default() -> Self {
        Self {
            mode: CovarianceMode::Global,
            epsilon: None,
            max_iterations: 500,
        }
    }
}

impl<T: Real> MinTitConfig<T> {
    pub fn new(mode: CovarianceMode, epsilon: Option<T>, max_iterations: usize) -> Self {
        Self {
            mode,
            epsilon,
            max_iterations,
        }
    }

    pub fn validate(&self) -> Result<(), MinTitError> {
        if let Some(eps) = self.epsilon {
            if !(eps > T::zero()) {
                return Err(MinTitError::InvalidConfig(format!("epsilon must be positive, got {eps}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(MinTitError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// `1e-6 · (1 + ‖f‖₂ / len(f))`.
    pub fn default_epsilon(f: &ForecastPanel<T>) -> T {
        let v = f.values();
        T::lit(1e-6) * (T::one() + v.norm() / T::count(v.len()))
    }

    pub fn effective_epsilon(&self, f: &ForecastPanel<T>) -> T {
        self.epsilon.unwrap_or_else(|| Self::default_epsilon(f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinTitResult<T: Real> {
    pub forecasts: ForecastPanel<T>,
    pub iterations_used: usize,
    pub converged: bool,
    pub final_change_norm: T,
    /// Change norm after each sweep.
    pub change_norms: Vec<T>,
    pub epsilon: T,
}

impl<T: Real> MinTitResult<T> {
    pub fn diagnostics(&self) -> MinTitDiagnostics {
        MinTitDiagnostics {
            iterations: self.iterations_used,
            converged: self.converged,
            epsilon: self.epsilon.as_f64(),
            change_norms: self.change_norms.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// Serializable convergence record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinTitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub epsilon: f64,
    pub change_norms: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SweepStep<T: Real> {
    sub: SubHierarchy,
    nodes: Vec<usize>,
    projection: DMatrix<T>,
}

/// Precomputed projections for every sub-hierarchy, in sweep order.
#[derive(Debug, Clone)]
pub struct SweepPlan<T: Real> {
    steps: Vec<SweepStep<T>>,
}

impl<T: Real> SweepPlan<T> {
    pub fn new(
        h: &Hierarchy,
        residuals: &ResidualPanel<T>,
        mode: CovarianceMode,
        global_cov: Option<&CovarianceEstimate<T>>,
    ) -> Result<Self, MinTitError> {
        if residuals.n_series() != h.len() {
            return Err(MinTitError::DimensionMismatch {
                what: "residual series",
                expected: h.len(),
                actual: residuals.n_series(),
            });
        }
        match (mode, global_cov) {
            (CovarianceMode::Global, Some(g)) if g.dim() != h.len() => {
                return Err(MinTitError::DimensionMismatch {
                    what: "global covariance size",
                    expected: h.len(),
                    actual: g.dim(),
                })
            }
            (CovarianceMode::Global, Some(_)) | (CovarianceMode::Local, None) => {}
            _ => return Err(MinTitError::GlobalCovarianceMode),
        }

        let steps = enumerate_subhierarchies(h)
            .into_iter()
            .map(|sub| {
                let nodes = sub.nodes();
                let parent = || h.label(sub.parent).to_string();
                let sigma = match global_cov {
                    Some(g) => subset(g, &nodes)?,
                    None => shrinkage_covariance_of(residuals, &nodes)
                        .map_err(|source| MinTitError::SubCovariance { parent: parent(), source })?,
                };
                let local_s = sub.local_structure::<T>();
                let g = min_trace_matrix(&local_s, sigma.matrix())
                    .map_err(|source| MinTitError::SubProblem { parent: parent(), source })?;
                Ok(SweepStep {
                    projection: local_s * g,
                    nodes,
                    sub,
                })
            })
            .collect::<Result<Vec<_>, MinTitError>>()?;
        Ok(Self { steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn subhierarchies(&self) -> impl Iterator<Item = &SubHierarchy> {
        self.steps.iter().map(|s| &s.sub)
    }

    /// Entries of the children blocks, `Σ w(w+1)/2` over all steps.
    pub fn children_block_parameters(&self) -> usize {
        self.steps.iter().map(|s| s.sub.width() * (s.sub.width() + 1) / 2).sum()
    }

    /// Distinct entries of every local covariance, `Σ (w+1)(w+2)/2`.
    pub fn local_covariance_entries(&self) -> usize {
        self.steps
            .iter()
            .map(|s| (s.sub.width() + 1) * (s.sub.width() + 2) / 2)
            .sum()
    }

    /// One Gauss–Seidel sweep over `values` (nodes × horizon), in place.
    pub fn apply(&self, values: &mut DMatrix<T>) {
        for step in &self.steps {
            let block = DMatrix::from_fn(step.nodes.len(), values.ncols(), |i, j| values[(step.nodes[i], j)]);
            let updated = &step.projection * block;
            for (i, &node) in step.nodes.iter().enumerate() {
                for j in 0..values.ncols() {
                    values[(node, j)] = updated[(i, j)];
                }
            }
        }
    }
}

fn check_forecasts<T: Real>(f: &ForecastPanel<T>, h: &Hierarchy) -> Result<(), MinTitError> {
    if f.n_series() != h.len() {
        return Err(MinTitError::DimensionMismatch {
            what: "forecast rows",
            expected: h.len(),
            actual: f.n_series(),
        });
    }
    Ok(())
}

/// A single sweep. `global_cov` must be present exactly when `cfg.mode` is
/// [`CovarianceMode::Global`].
pub fn mintit_sweep<T: Real>(
    f: &ForecastPanel<T>,
    residuals: &ResidualPanel<T>,
    h: &Hierarchy,
    cfg: &MinTitConfig<T>,
    global_cov: Option<&CovarianceEstimate<T>>,
) -> Result<ForecastPanel<T>, MinTitError> {
    check_forecasts(f, h)?;
    let plan = SweepPlan::new(h, residuals, cfg.mode, global_cov)?;
    let mut values = f.values().clone();
    plan.apply(&mut values);
    ForecastPanel::new(values).map_err(|_| MinTitError::Divergence { iteration: 1 })
}

/// Overwrites every internal node with the sum of its children.
pub fn aggregate_upward<T: Real>(values: &mut DMatrix<T>, h: &Hierarchy) {
    for i in (0..h.len()).rev() {
        if h.is_bottom(i) {
            continue;
        }
        for j in 0..values.ncols() {
            let mut acc = T::zero();
            for &c in h.children(i) {
                acc += values[(c, j)];
            }
            values[(i, j)] = acc;
        }
    }
}

/// Runs sweeps to convergence (or `max_iterations`), then sums the bottom
/// forecasts upward.
pub fn mintit<T: Real>(
    f: &ForecastPanel<T>,
    residuals: &ResidualPanel<T>,
    h: &Hierarchy,
    cfg: &MinTitConfig<T>,
) -> Result<MinTitResult<T>, MinTitError> {
    cfg.validate()?;
    check_forecasts(f, h)?;
    let global = match cfg.mode {
        CovarianceMode::Global => Some(shrinkage_covariance(residuals)?),
        CovarianceMode::Local => None,
    };
    let plan = SweepPlan::new(h, residuals, cfg.mode, global.as_ref())?;
    let epsilon = cfg.effective_epsilon(f);

    let mut values = f.values().clone();
    let mut change_norms = Vec::new();
    let mut converged = false;
    for iteration in 1..=cfg.max_iterations {
        let old = values.clone();
        plan.apply(&mut values);
        if first_non_finite(&values).is_some() {
            return Err(MinTitError::Divergence { iteration });
        }
        let change = (&values - &old).norm();
        change_norms.push(change);
        if change < epsilon {
            converged = true;
            break;
        }
    }
    aggregate_upward(&mut values, h);

    Ok(MinTitResult {
        forecasts: ForecastPanel::new(values).map_err(|_| MinTitError::Divergence {
            iteration: change_norms.len(),
        })?,
        iterations_used: change_norms.len(),
        converged,
        final_change_norm: *change_norms.last().expect("at least one sweep"),
        change_norms,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::build_structure_matrix;
    use crate::reconcilers::{g_min_trace, reconcile};
    use crate::testutil::{lcg, two_level};

    fn panel(h: &Hierarchy, rows: usize, seed: u64) -> ResidualPanel<f64> {
        let noise = lcg(seed, rows * h.len());
        let bottoms = h.bottom_indices();
        // Bottom residuals plus summed-up residuals with extra noise above.
        let mut values = DMatrix::zeros(rows, h.len());
        for r in 0..rows {
            for &b in bottoms {
                values[(r, b)] = noise[r * h.len() + b];
            }
        }
        for r in 0..rows {
            let mut row = values.row(r).transpose();
            aggregate_upward_vec(&mut row, h);
            for i in 0..h.len() {
                let extra = if h.is_bottom(i) { 0.0 } else { 0.3 * noise[r * h.len() + i] };
                values[(r, i)] = row[i] + extra;
            }
        }
        ResidualPanel::complete(values).unwrap()
    }

    fn aggregate_upward_vec(v: &mut nalgebra::DVector<f64>, h: &Hierarchy) {
        let mut m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        aggregate_upward(&mut m, h);
        v.copy_from_slice(m.as_slice());
    }

    fn forecasts(h: &Hierarchy, steps: usize, seed: u64) -> ForecastPanel<f64> {
        let v = lcg(seed, h.len() * steps);
        ForecastPanel::new(DMatrix::from_fn(h.len(), steps, |i, j| 10.0 * v[i * steps + j])).unwrap()
    }

    #[test]
    fn one_internal_node_sweep_equals_mint() {
        let h = Hierarchy::balanced(&[4]).unwrap();
        let r = panel(&h, 12, 3);
        let f = forecasts(&h, 3, 4);
        let global = shrinkage_covariance(&r).unwrap();
        let cfg = MinTitConfig::default();
        let swept = mintit_sweep(&f, &r, &h, &cfg, Some(&global)).unwrap();
        let s = build_structure_matrix(&h);
        let direct = reconcile(&f, &g_min_trace(&s, &global).unwrap(), &s).unwrap();
        assert!((swept.values() - direct.values()).abs().max() < 1e-10);

        let res = mintit(&f, &r, &h, &cfg).unwrap();
        assert_eq!(res.iterations_used, 2);
        assert!(res.converged);
        assert!((res.forecasts.values() - direct.values()).abs().max() < 1e-10);

        let local = mintit(&f, &r, &h, &MinTitConfig::new(CovarianceMode::Local, None, 500)).unwrap();
        assert!((local.forecasts.values() - direct.values()).abs().max() < 1e-10);
    }

    #[test]
    fn single_child_is_equalized() {
        let h = Hierarchy::new([("T", None), ("A", Some("T"))]).unwrap();
        let r = panel(&h, 8, 5);
        let f = ForecastPanel::new(DMatrix::from_row_slice(2, 1, &[10.0, 4.0])).unwrap();
        let cfg = MinTitConfig::new(CovarianceMode::Local, None, 10);
        let out = mintit_sweep(&f, &r, &h, &cfg, None).unwrap();
        let (t, a) = (out.values()[(0, 0)], out.values()[(1, 0)]);
        assert!((t - a).abs() < 1e-12);
        assert!(t > 4.0 && t < 10.0);
    }

    #[test]
    fn two_level_plan_has_three_steps_in_order() {
        let h = two_level();
        let r = panel(&h, 10, 6);
        let plan = SweepPlan::new(&h, &r, CovarianceMode::Local, None).unwrap();
        let parents: Vec<&str> = plan.subhierarchies().map(|s| h.label(s.parent)).collect();
        assert_eq!(parents, ["T", "A", "B"]);
    }

    #[test]
    fn huge_epsilon_stops_after_one_sweep() {
        let h = two_level();
        let r = panel(&h, 10, 7);
        let f = forecasts(&h, 2, 8);
        let res = mintit(&f, &r, &h, &MinTitConfig::new(CovarianceMode::Global, Some(f64::INFINITY), 500)).unwrap();
        assert_eq!(res.iterations_used, 1);
        assert!(res.converged);
    }

    #[test]
    fn converges_to_fixed_point_and_is_coherent() {
        let h = two_level();
        let r = panel(&h, 15, 9);
        let f = forecasts(&h, 4, 10);
        for mode in [CovarianceMode::Global, CovarianceMode::Local] {
            let cfg = MinTitConfig::new(mode, Some(1e-8), 500);
            let res = mintit(&f, &r, &h, &cfg).unwrap();
            assert!(res.converged, "{mode:?}: {:?}", res.change_norms.last());
            assert!(res.final_change_norm < 1e-8);
            let global = (mode == CovarianceMode::Global).then(|| shrinkage_covariance(&r).unwrap());
            let again = mintit_sweep(&res.forecasts, &r, &h, &cfg, global.as_ref()).unwrap();
            assert!((again.values() - res.forecasts.values()).norm() < 1e-8);
            let v = res.forecasts.values();
            for i in 0..h.len() {
                if !h.is_bottom(i) {
                    for j in 0..v.ncols() {
                        let sum: f64 = h.children(i).iter().map(|&c| v[(c, j)]).sum();
                        assert!((v[(i, j)] - sum).abs() <= 1e-10 * (1.0 + sum.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn max_iterations_reached_reports_not_converged() {
        let h = Hierarchy::balanced(&[2, 2, 2]).unwrap();
        let r = panel(&h, 20, 11);
        let f = forecasts(&h, 2, 12);
        let res = mintit(&f, &r, &h, &MinTitConfig::new(CovarianceMode::Global, Some(1e-300), 3)).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations_used, 3);
        assert_eq!(res.change_norms.len(), 3);
    }

    #[test]
    fn config_validation() {
        let h = two_level();
        let r = panel(&h, 10, 1);
        let f = forecasts(&h, 1, 2);
        for cfg in [
            MinTitConfig::new(CovarianceMode::Global, Some(0.0), 10),
            MinTitConfig::new(CovarianceMode::Global, Some(-1.0), 10),
            MinTitConfig::new(CovarianceMode::Global, None, 0),
        ] {
            assert!(matches!(mintit(&f, &r, &h, &cfg), Err(MinTitError::InvalidConfig(_))));
        }
        let cfg = MinTitConfig::<f64>::default();
        assert_eq!(
            mintit_sweep(&f, &r, &h, &cfg, None).unwrap_err(),
            MinTitError::GlobalCovarianceMode
        );
    }

    #[test]
    fn singular_sub_problem_names_the_parent() {
        let h = two_level();
        let mut values = panel(&h, 10, 13).values().clone();
        // Make B's sub-panel degenerate: BC identically zero.
        let bc = h.index_of("BC").unwrap();
        values.column_mut(bc).fill(0.0);
        let r = ResidualPanel::complete(values).unwrap();
        let err = SweepPlan::new(&h, &r, CovarianceMode::Local, None).unwrap_err();
        match err {
            MinTitError::SubCovariance { parent, .. } => assert_eq!(parent, "B"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn balanced_tree_parameter_counts() {
        let h = Hierarchy::balanced(&[3, 3, 3]).unwrap();
        let r = panel(&h, 30, 14);
        let plan = SweepPlan::new(&h, &r, CovarianceMode::Local, None).unwrap();
        assert_eq!(plan.len(), 13);
        assert_eq!(
            plan.children_block_parameters() as u64,
            crate::hierarchy::mintit_param_count(3, 3).unwrap()
        );
        assert_eq!(plan.local_covariance_entries(), 13 * 10);
    }
}
