use thiserror::Error;

use crate::baseforecast::ForecastError;
use crate::covariance::CovarianceError;
use crate::hierarchy::HierarchyError;
use crate::io::IoError;
use crate::metrics::MetricsError;
use crate::mintit::MinTitError;
use crate::reconcilers::ReconcileError;
use crate::scenarios::ScenarioError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
    #[error(transparent)]
    MinTit(#[from] MinTitError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("replicate {rep}: {source}")]
    Replicate {
        rep: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Numerical failures (ill-conditioning, divergence, degenerate
    /// covariances) as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Covariance(e) => covariance_numerical(e),
            Error::Reconcile(e) => reconcile_numerical(e),
            Error::MinTit(e) => match e {
                MinTitError::Divergence { .. } => true,
                MinTitError::SubProblem { source, .. } => reconcile_numerical(source),
                MinTitError::SubCovariance { source, .. } | MinTitError::Covariance(source) => covariance_numerical(source),
                _ => false,
            },
            Error::Metrics(MetricsError::ZeroBaseline) => true,
            Error::Replicate { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

fn covariance_numerical(e: &CovarianceError) -> bool {
    matches!(e, CovarianceError::ZeroVariance { .. } | CovarianceError::NonFinite { .. })
}

fn reconcile_numerical(e: &ReconcileError) -> bool {
    match e {
        ReconcileError::NonPositiveVariance(_)
        | ReconcileError::IllConditionedWeights { .. }
        | ReconcileError::StructuralRank
        | ReconcileError::NotSymmetric(..) => true,
        ReconcileError::Covariance(c) => covariance_numerical(c),
        _ => false,
    }
}
