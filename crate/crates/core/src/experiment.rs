//! Monte Carlo driver: generate, fit, reconcile and score every replicate.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::baseforecast::{fit_forecast, ForecasterKind};
use crate::covariance::ResidualPanel;
use crate::hierarchy::build_structure_matrix;
use crate::metrics::{build_report_with, node_window_rmse, Aggregation, MethodRmse, RepResult, RunReport};
use crate::mintit::MinTitConfig;
use crate::pipeline::reconcile_with;
use crate::reconcilers::{ForecastPanel, Method};
use crate::scenarios::{generate, ScenarioConfig, SeriesPanel};
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub base: ForecasterKind,
    pub methods: Vec<Method>,
    pub mintit: MinTitConfig<f64>,
    /// Worker threads; `None` uses rayon's global pool.
    pub threads: Option<usize>,
    pub aggregation: Aggregation,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            scenario,
            base: ForecasterKind::DEFAULT_AR,
            methods: Method::STUDY.to_vec(),
            mintit: MinTitConfig::default(),
            threads: None,
            aggregation: Aggregation::PerRep,
        }
    }
}

/// Everything computed for one replicate before scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct RepForecasts {
    pub panel: SeriesPanel,
    /// Holdout actuals, nodes × horizon.
    pub actuals: DMatrix<f64>,
    pub base: ForecastPanel<f64>,
    pub residuals: ResidualPanel<f64>,
}

/// Splits off the holdout and fits base forecasts for every node.
pub fn base_forecasts(panel: SeriesPanel, holdout: usize, kind: ForecasterKind) -> Result<RepForecasts, Error> {
    let m = panel.hierarchy.len();
    let train_rows = panel.len() - holdout;
    let mut forecasts = DMatrix::zeros(m, holdout);
    let mut residuals = DMatrix::zeros(train_rows, m);
    let mut starts = vec![0; m];
    for i in 0..m {
        let begin = panel.start[i];
        let train: Vec<f64> = (begin..train_rows).map(|r| panel.values[(r, i)]).collect();
        let fit = fit_forecast(&train, holdout, kind)?;
        for (j, v) in fit.forecasts.iter().enumerate() {
            forecasts[(i, j)] = *v;
        }
        starts[i] = begin + fit.warmup;
        for (k, v) in fit.residuals.iter().enumerate() {
            residuals[(starts[i] + k, i)] = *v;
        }
    }
    let actuals = DMatrix::from_fn(m, holdout, |i, j| panel.values[(train_rows + j, i)]);
    Ok(RepForecasts {
        panel,
        actuals,
        base: ForecastPanel::new(forecasts)?,
        residuals: ResidualPanel::new(residuals, starts)?,
    })
}

pub fn run_rep(cfg: &ExperimentConfig, rep: usize) -> Result<RepResult, Error> {
    let windows = cfg.scenario.windows();
    let panel = generate(&cfg.scenario, rep as u64)?;
    let data = base_forecasts(panel, cfg.scenario.holdout, cfg.base)?;
    let h = &data.panel.hierarchy;
    let s = build_structure_matrix::<f64>(h);
    let base = node_window_rmse(data.base.values(), &data.actuals, &windows)?;
    let methods = cfg
        .methods
        .iter()
        .map(|&method| {
            let out = reconcile_with(method, h, &s, &data.base, Some(&data.residuals), &cfg.mintit)?;
            Ok(MethodRmse {
                method,
                rmse: node_window_rmse(out.forecasts.values(), &data.actuals, &windows)?,
                mintit: out.mintit,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(RepResult { rep, base, methods })
}

/// Runs every replicate. Results are collected in replicate order, so the
/// output is identical for any thread count.
pub fn run_reps(cfg: &ExperimentConfig) -> Result<Vec<RepResult>, Error> {
    let work = || {
        (0..cfg.scenario.reps)
            .into_par_iter()
            .map(|rep| run_rep(cfg, rep).map_err(|e| Error::Replicate { rep, source: Box::new(e) }))
            .collect::<Result<Vec<_>, Error>>()
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(work),
        None => work(),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunReport, Vec<RepResult>), Error> {
    let reps = run_reps(cfg)?;
    let h = generate(&cfg.scenario, 0)?.hierarchy;
    let report = build_report_with(&h, &cfg.scenario.windows(), &reps, cfg.aggregation)?;
    Ok((report, reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::Scenario;

    #[test]
    fn base_forecasts_offsets_residuals() {
        let cfg = ScenarioConfig::new(Scenario::DiffLen, 120, 1, 7).unwrap();
        let panel = generate(&cfg, 0).unwrap();
        let data = base_forecasts(panel, 4, ForecasterKind::Naive).unwrap();
        let h = &data.panel.hierarchy;
        let bba = h.index_of("BBA").unwrap();
        assert_eq!(data.residuals.n_rows(), 116);
        // 15 observed, 4 held out, 11 training values, naive warm-up of 1.
        assert_eq!(data.residuals.start(bba), 106);
        assert_eq!(data.base.horizon(), 4);
        assert_eq!(data.actuals[(bba, 0)], data.panel.values[(116, bba)]);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let scenario = ScenarioConfig::new(Scenario::Correlated, 30, 6, 11).unwrap();
        let mut cfg = ExperimentConfig::new(scenario);
        cfg.threads = Some(1);
        let (one, _) = run_experiment(&cfg).unwrap();
        cfg.threads = Some(3);
        let (three, _) = run_experiment(&cfg).unwrap();
        assert_eq!(one.to_csv(), three.to_csv());
        assert_eq!(one.methods, Method::STUDY);
    }
}
